// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dpef {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent stream keyed by (seed, counters...). Streams never share state,
/// so work split across threads draws the same numbers as a serial run.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> counters = {}) {
    std::uint64_t h = splitmix64(seed);
    for (auto c : counters) h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
    return Rng(h);
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return std::bernoulli_distribution(p)(rng);
}

/// Normal(0, std) truncated to +-2 std by rejection.
inline double truncated_normal(Rng& rng, double std) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (;;) {
        double v = dist(rng);
        if (v >= -2.0 && v <= 2.0) return v * std;
    }
}

}  // namespace dpef
