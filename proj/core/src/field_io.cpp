#include "histreg/field_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace histreg {

namespace {

constexpr std::array<char, 4> kMagic{'D', 'F', 'L', '1'};

void put_u32(std::ostream& out, std::uint32_t value) {
    const std::array<char, 4> bytes{static_cast<char>(value & 0xffu),
                                    static_cast<char>((value >> 8) & 0xffu),
                                    static_cast<char>((value >> 16) & 0xffu),
                                    static_cast<char>((value >> 24) & 0xffu)};
    out.write(bytes.data(), bytes.size());
}

std::uint32_t get_u32(std::istream& in) {
    std::array<unsigned char, 4> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
        throw Error(ErrorCode::parse, "DFL1: truncated file");
    }
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void put_f32(std::ostream& out, double value) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

double get_f32(std::istream& in) {
    return static_cast<double>(std::bit_cast<float>(get_u32(in)));
}

}  // namespace

void write_field(std::ostream& out, const DisplacementField& field) {
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, static_cast<std::uint32_t>(field.width()));
    put_u32(out, static_cast<std::uint32_t>(field.height()));
    const auto u = field.u_data();
    const auto v = field.v_data();
    for (std::size_t i = 0; i < u.size(); ++i) {
        put_f32(out, u[i]);
        put_f32(out, v[i]);
    }
    if (!out) throw Error(ErrorCode::io, "DFL1: write failed");
}

void write_field(const std::filesystem::path& path, const DisplacementField& field) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
    write_field(out, field);
}

DisplacementField read_field(std::istream& in) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
        throw Error(ErrorCode::parse, "DFL1: bad magic");
    }
    const std::uint32_t width = get_u32(in);
    const std::uint32_t height = get_u32(in);
    if (width > (1u << 20) || height > (1u << 20)) {
        throw Error(ErrorCode::parse, "DFL1: implausible dimensions");
    }
    DisplacementField field(static_cast<int>(width), static_cast<int>(height));
    auto u = field.u_data();
    auto v = field.v_data();
    for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = get_f32(in);
        v[i] = get_f32(in);
        if (!std::isfinite(u[i]) || !std::isfinite(v[i])) {
            throw Error(ErrorCode::parse, "DFL1: non-finite displacement");
        }
    }
    return field;
}

DisplacementField read_field(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    return read_field(in);
}

}  // namespace histreg
