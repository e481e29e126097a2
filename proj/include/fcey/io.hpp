#pragma once

// Tensor dump format: 64-bit LE rank, then one 64-bit LE extent per axis,
// then float32 LE values row-major. Checkpoints are a JSON manifest plus a
// .bin of concatenated dumps; round-trip is bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fcey/tensor.hpp"

namespace fcey {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("tensor dump: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline void write_f32_le(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("tensor dump: truncated data");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

template <typename T>
void dump_tensor(std::ostream& os, const Tensor<T>& t) {
    write_u64_le(os, std::uint64_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u64_le(os, std::uint64_t(t.dim(i)));
    for (T v : t.data()) write_f32_le(os, float(v));
}

template <typename T>
Tensor<T> load_tensor(std::istream& is) {
    std::uint64_t rank = read_u64_le(is);
    if (rank < 1 || rank > 4) throw std::runtime_error("tensor dump: bad rank " + std::to_string(rank));
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(int(read_u64_le(is)));
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = T(read_f32_le(is));
    return t;
}

template <typename T>
void dump_tensor_file(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    dump_tensor(os, t);
}

template <typename T>
Tensor<T> load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    return load_tensor<T>(is);
}

}  // namespace fcey
