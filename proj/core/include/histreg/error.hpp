#pragma once

#include <stdexcept>
#include <string>

namespace histreg {

enum class ErrorCode {
    dimension_mismatch,
    singular_matrix,
    degenerate_input,
    out_of_bounds,
    too_small,
    empty_input,
    no_consensus,
    io,
    parse,
};

const char* to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries a code so callers (and the batch
// runner) can tell an expected per-pair failure from a programming error.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace histreg
