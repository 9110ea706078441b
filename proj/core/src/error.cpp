#include "histreg/error.hpp"

namespace histreg {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::singular_matrix: return "singular_matrix";
        case ErrorCode::degenerate_input: return "degenerate_input";
        case ErrorCode::out_of_bounds: return "out_of_bounds";
        case ErrorCode::too_small: return "too_small";
        case ErrorCode::empty_input: return "empty_input";
        case ErrorCode::no_consensus: return "no_consensus";
        case ErrorCode::io: return "io";
        case ErrorCode::parse: return "parse";
    }
    return "unknown";
}

}  // namespace histreg
