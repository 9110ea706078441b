#pragma once

// DFL1 displacement field files: little-endian, magic "DFL1", u32 width,
// u32 height, then width*height records of (float32 u, float32 v), row-major.

#include <filesystem>
#include <iosfwd>

#include "histreg/image.hpp"

namespace histreg {

void write_field(std::ostream& out, const DisplacementField& field);
void write_field(const std::filesystem::path& path, const DisplacementField& field);

DisplacementField read_field(std::istream& in);
DisplacementField read_field(const std::filesystem::path& path);

}  // namespace histreg
