// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dpef/errors.hpp"

namespace dpef {

/// One named float32 array.
struct NamedArray {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<float> values;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'E', 'F', '0', '0', '0', '1'};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline void put_f32(std::ostream& out, float f) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Layout: magic "DPEF0001", u64 entry count, then per entry u64 name
/// length, name bytes, u64 rank, rank x u64 extents, float32 payload.
/// Integers and floats are little-endian.
inline void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot write " + path.string());
    out.write(kCheckpointMagic, 8);
    detail::put_u64(out, entries.size());
    for (const auto& e : entries) {
        std::uint64_t n = 1;
        for (auto d : e.shape) n *= d;
        if (n != e.values.size()) throw FormatError("checkpoint: entry " + e.name + " shape/payload mismatch");
        detail::put_u64(out, e.name.size());
        out.write(e.name.data(), std::streamsize(e.name.size()));
        detail::put_u64(out, e.shape.size());
        for (auto d : e.shape) detail::put_u64(out, d);
        for (float v : e.values) detail::put_f32(out, v);
    }
    if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

inline std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw FormatError("checkpoint: bad magic in " + path.string());
    }
    const auto count = detail::get_u64(in);
    std::vector<NamedArray> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedArray e;
        const auto len = detail::get_u64(in);
        if (len > (1u << 20)) throw FormatError("checkpoint: implausible name length");
        e.name.resize(len);
        if (!in.read(e.name.data(), std::streamsize(len))) throw FormatError("checkpoint: truncated name");
        const auto rank = detail::get_u64(in);
        if (rank > 8) throw FormatError("checkpoint: implausible rank for " + e.name);
        std::uint64_t n = 1;
        for (std::uint64_t r = 0; r < rank; ++r) {
            e.shape.push_back(detail::get_u64(in));
            n *= e.shape.back();
        }
        e.values.resize(n);
        std::vector<unsigned char> raw(n * 4);
        if (!in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()))) {
            throw FormatError("checkpoint: truncated payload for " + e.name);
        }
        for (std::uint64_t k = 0; k < n; ++k) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= std::uint32_t(raw[4 * k + b]) << (8 * b);
            e.values[k] = std::bit_cast<float>(u);
        }
        out.push_back(std::move(e));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
    return out;
}

}  // namespace dpef
