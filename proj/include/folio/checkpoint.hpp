#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "graph.hpp"
#include "tensor.hpp"

namespace folio {

// Checkpoint container: ordered named tensors.  On disk each entry is a
// shape header followed by raw little-endian 64-bit values, so round trips
// are bit-exact.
using tensor_map = std::vector<std::pair<std::string, tensor>>;

namespace detail {

inline constexpr char checkpoint_magic[8] = {'F', 'O', 'L', 'I', 'O', 'T', 'S', '1'};

inline void put_u32(std::ostream& out, std::uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw parse_error(std::string("checkpoint: truncated ") + what);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return x;
}

inline double get_f64(std::istream& in, const char* what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw parse_error(std::string("checkpoint: truncated ") + what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
}

}  // namespace detail

inline void write_tensor_file(const std::string& path, const tensor_map& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("checkpoint: cannot open " + path + " for writing");
    out.write(detail::checkpoint_magic, sizeof detail::checkpoint_magic);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        for (double x : t.v) detail::put_f64(out, x);
    }
    if (!out) throw data_error("checkpoint: write failed for " + path);
}

inline tensor_map read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint: cannot open " + path);
    char magic[sizeof detail::checkpoint_magic];
    if (!in.read(magic, sizeof magic) ||
        std::memcmp(magic, detail::checkpoint_magic, sizeof magic) != 0)
        throw parse_error("checkpoint: bad magic in " + path);
    const std::uint32_t count = detail::get_u32(in, "entry count");
    tensor_map out;
    out.reserve(count);
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = detail::get_u32(in, "name length");
        if (name_len > 4096) throw parse_error("checkpoint: unreasonable name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw parse_error("checkpoint: truncated name");
        const std::uint32_t rank = detail::get_u32(in, "rank");
        if (rank > 8) throw parse_error("checkpoint: unreasonable rank for " + name);
        std::vector<int> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<int>(detail::get_u32(in, "dimension"));
            if (d <= 0 || n > (1u << 28)) throw parse_error("checkpoint: bad shape for " + name);
            n *= static_cast<std::size_t>(d);
        }
        tensor t(shape);
        for (auto& x : t.v) x = detail::get_f64(in, "value");
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

// Lookup by exact name; null when absent.
inline const tensor* find_tensor(const tensor_map& tensors, const std::string& name) {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

// Snapshot of every parameter, prefixed so trainer state can share the file.
inline tensor_map snapshot_parameters(const parameter_set& params, const std::string& prefix) {
    tensor_map out;
    for (int i = 0; i < params.size(); ++i)
        out.emplace_back(prefix + params.at(i).name, params.at(i).value);
    return out;
}

// Restores parameter values by name; every parameter must be present with a
// matching shape.
inline void restore_parameters(parameter_set& params, const tensor_map& tensors,
                               const std::string& prefix) {
    for (int i = 0; i < params.size(); ++i) {
        parameter& p = params.at(i);
        const std::string key = prefix + p.name;
        bool found = false;
        for (const auto& [name, t] : tensors) {
            if (name != key) continue;
            if (t.shape != p.value.shape)
                throw parse_error("checkpoint: shape mismatch for " + key + ": file has " +
                                  shape_string(t.shape) + ", model needs " +
                                  shape_string(p.value.shape));
            p.value.v = t.v;
            found = true;
            break;
        }
        if (!found) throw parse_error("checkpoint: missing parameter " + key);
    }
}

}  // namespace folio
