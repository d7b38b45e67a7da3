#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lesyn/core/tensor.hpp"

// Checkpoint blob: magic, version, then (name, dtype, shape, raw data) records.
// Little-endian on-disk layout; this artifact targets little-endian hosts.

namespace lesyn::io {

inline constexpr char kBlobMagic[8] = {'L', 'S', 'Y', 'N', 'B', 'L', 'B', '1'};

enum class Dtype : uint8_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr Dtype dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "unsupported scalar");
    return std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
}

namespace detail {

template <typename V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw std::runtime_error("blob: truncated read");
    return v;
}

}  // namespace detail

template <typename T>
void save_tensors(const std::string& path, const std::map<std::string, const Tensor<T>*>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("blob: cannot open for write: " + path);
    os.write(kBlobMagic, sizeof(kBlobMagic));
    detail::write_pod<uint32_t>(os, 1);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<uint8_t>(os, static_cast<uint8_t>(dtype_of<T>()));
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t->rank()));
        for (int64_t d : t->shape()) detail::write_pod<int64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * sizeof(T)));
    }
    if (!os) throw std::runtime_error("blob: write failed: " + path);
}

template <typename T>
std::map<std::string, Tensor<T>> load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("blob: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kBlobMagic, 8) != 0) throw std::runtime_error("blob: bad magic: " + path);
    const uint32_t version = detail::read_pod<uint32_t>(is);
    if (version != 1) throw std::runtime_error("blob: unsupported version");
    const uint32_t count = detail::read_pod<uint32_t>(is);
    std::map<std::string, Tensor<T>> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = detail::read_pod<uint32_t>(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const auto dt = static_cast<Dtype>(detail::read_pod<uint8_t>(is));
        if (dt != dtype_of<T>()) throw std::runtime_error("blob: dtype mismatch for " + name);
        const uint32_t rank = detail::read_pod<uint32_t>(is);
        std::vector<int64_t> shape(rank);
        for (auto& d : shape) d = detail::read_pod<int64_t>(is);
        Tensor<T> t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
        if (!is) throw std::runtime_error("blob: truncated tensor data in " + path);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

// FNV-1a over a file's bytes; used for run manifests and reproducibility checks.
inline uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("hash_file: cannot open: " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[1 << 14];
    while (is) {
        is.read(buf, sizeof(buf));
        const std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

inline uint64_t hash_bytes(const std::string& bytes, uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace lesyn::io
