#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchfuse/tensor.hpp"

namespace sketchfuse {

// Little-endian primitives. All on-disk formats in this project are LE.

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw std::runtime_error("serialize: unexpected end of stream");
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

} // namespace detail

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        throw std::runtime_error(what + ": bad magic");
}

// Shape + float64 payload.
inline void write_tensor_f64(std::ostream& os, const DTensor& t) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.numel(); ++i) detail::write_le<double>(os, t.at(i));
}

inline DTensor read_tensor_f64(std::istream& is) {
    const auto rank = detail::read_le<std::uint32_t>(is);
    if (rank > 8) throw std::runtime_error("serialize: implausible tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_le<std::uint32_t>(is));
    DTensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = detail::read_le<double>(is);
    return t;
}

// Standalone tensor file, used by the external backbone bridge.
inline void save_tensor(const std::string& path, const DTensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_tensor: cannot open " + path);
    write_magic(os, "SFTN");
    detail::write_le<std::uint32_t>(os, 1u);
    write_tensor_f64(os, t);
    if (!os) throw std::runtime_error("save_tensor: write failed for " + path);
}

inline DTensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_tensor: cannot open " + path);
    expect_magic(is, "SFTN", "load_tensor");
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != 1) throw std::runtime_error("load_tensor: unsupported version");
    return read_tensor_f64(is);
}

} // namespace sketchfuse
