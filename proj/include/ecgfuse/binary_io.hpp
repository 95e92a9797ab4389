#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ecgfuse/error.hpp"

// Little-endian scalar encoding for the on-disk artifact formats.
namespace ecgfuse::binary {

template <typename U>
void put_uint(std::ostream& out, U value) {
    char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes, sizeof(U));
}

template <typename U>
U get_uint(std::istream& in) {
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
        throw Error(ErrorCode::UnreadableFile, "unexpected end of binary data");
    }
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

inline void put_u8(std::ostream& out, std::uint8_t v) { put_uint(out, v); }
inline void put_u32(std::ostream& out, std::uint32_t v) { put_uint(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_uint(out, v); }
inline void put_f32(std::ostream& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint8_t get_u8(std::istream& in) { return get_uint<std::uint8_t>(in); }
inline std::uint32_t get_u32(std::istream& in) { return get_uint<std::uint32_t>(in); }
inline std::uint64_t get_u64(std::istream& in) { return get_uint<std::uint64_t>(in); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_uint<std::uint32_t>(in)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_uint<std::uint64_t>(in)); }

// u32 length prefix, then raw bytes.
inline void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
    const std::uint32_t n = get_u32(in);
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw Error(ErrorCode::UnreadableFile, "unexpected end of binary data");
    return s;
}

inline void put_f64s(std::ostream& out, std::span<const double> values) {
    for (double v : values) put_f64(out, v);
}

inline std::vector<double> get_f64s(std::istream& in, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = get_f64(in);
    return v;
}

inline void expect_magic(std::istream& in, std::string_view magic, const std::string& what) {
    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
        throw Error(ErrorCode::UnsupportedFormat, what + ": bad magic, expected " + std::string(magic));
    }
}

}  // namespace ecgfuse::binary
