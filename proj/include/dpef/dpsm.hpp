// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpef/encoder.hpp"
#include "dpef/errors.hpp"
#include "dpef/image.hpp"

namespace dpef {

enum class SelectionStrategy { dynamic, fixed };
enum class ProxySource { closest_patch, global_token };

struct SelectionConfig {
    SelectionStrategy strategy = SelectionStrategy::dynamic;
    std::size_t fixed_k = 0;
    std::size_t k_min = 12;
    std::size_t parts = 4;
    ProxySource proxy_source = ProxySource::closest_patch;

    void validate(std::size_t n) const {
        if (parts == 0) throw ConfigError("selection: P must be >= 1");
        if (k_min < 1 || k_min > n) {
            throw ConfigError("selection: k_min " + std::to_string(k_min) + " outside [1, " + std::to_string(n) + "]");
        }
        if (strategy == SelectionStrategy::fixed && (fixed_k < 1 || fixed_k > n)) {
            throw ConfigError("selection: fixed k " + std::to_string(fixed_k) + " outside [1, " + std::to_string(n) + "]");
        }
    }
};

/// Sentinel proxy index meaning the class token itself scored the patches.
inline constexpr std::size_t kGlobalProxy = std::numeric_limits<std::size_t>::max();

template <typename T>
struct SelectionResult {
    std::size_t proxy_index = kGlobalProxy;
    std::vector<double> scores;        // S^p, token order
    std::vector<std::size_t> order;    // token indices by descending score
    std::vector<double> diff;          // S^o[i] - S^o[i+1]
    std::size_t raw_k = 0;             // argmax(diff) + 1, before the floor
    std::size_t k = 0;
    std::vector<std::size_t> selected; // the top-k tokens, in `order` order
    Tensor<T> parts;                   // P x c

    bool uses_global_proxy() const { return proxy_index == kGlobalProxy; }
};

namespace detail {
template <typename T>
double row_dot(const Tensor<T>& a, std::size_t ra, const Tensor<T>& b, std::size_t rb) {
    const std::size_t c = a.cols();
    const T* pa = a.data().data() + ra * c;
    const T* pb = b.data().data() + rb * c;
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += double(pa[j]) * double(pb[j]);
    return s;
}
}  // namespace detail

/// argmax_i f_g . f_i, smallest index on ties; kGlobalProxy for the
/// global-token variant.
template <typename T>
std::size_t find_proxy(const TokenSet<T>& tokens, ProxySource source = ProxySource::closest_patch) {
    if (source == ProxySource::global_token) return kGlobalProxy;
    const std::size_t n = tokens.size();
    if (n == 0) throw ConfigError("find_proxy: no patch tokens");
    if (tokens.cls.cols() != tokens.dim()) throw DimensionError("find_proxy: class/patch dims differ");
    std::size_t best = 0;
    double best_score = detail::row_dot(tokens.cls, 0, tokens.patches, 0);
    for (std::size_t i = 1; i < n; ++i) {
        double s = detail::row_dot(tokens.cls, 0, tokens.patches, i);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

/// Averages the selected tokens in P raster-order groups (P x c).
/// Differentiable with respect to the token values.
template <typename T>
Tensor<T> pool_selected(const TokenSet<T>& tokens, const std::vector<std::size_t>& selected, std::size_t parts) {
    if (selected.size() < parts) {
        throw SelectionTooSmallError("pool_selected: k=" + std::to_string(selected.size()) + " < P=" +
                                     std::to_string(parts));
    }
    return group_mean_rows(tokens.patches, split_groups(raster_order(tokens.grid, selected), parts));
}

template <typename T>
Tensor<T> pool_selected(const TokenSet<T>& tokens, const SelectionResult<T>& result, std::size_t parts) {
    return pool_selected(tokens, result.selected, parts);
}

/// Scores every patch token against the proxy, sorts, splits at the largest
/// first-order drop, floors at k_min, and pools the survivors into P parts.
/// Scoring is a hard gate and records nothing on the tape.
template <typename T>
SelectionResult<T> select(const TokenSet<T>& tokens, const SelectionConfig& config) {
    const std::size_t n = tokens.size();
    config.validate(n);
    if (config.strategy == SelectionStrategy::dynamic && n < 2) {
        throw ConfigError("select: dynamic strategy needs N >= 2");
    }

    SelectionResult<T> r;
    r.proxy_index = find_proxy(tokens, config.proxy_source);
    r.scores.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        r.scores[i] = r.uses_global_proxy() ? detail::row_dot(tokens.cls, 0, tokens.patches, i)
                                            : detail::row_dot(tokens.patches, r.proxy_index, tokens.patches, i);
    }
    if (!r.uses_global_proxy()) {
        // Unit tokens make the self-score maximal; pin it against rounding.
        double mx = *std::max_element(r.scores.begin(), r.scores.end());
        r.scores[r.proxy_index] = std::max(mx, r.scores[r.proxy_index]);
    }

    r.order.resize(n);
    std::iota(r.order.begin(), r.order.end(), 0);
    std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
        if (r.scores[a] != r.scores[b]) return r.scores[a] > r.scores[b];
        if (!r.uses_global_proxy() && (a == r.proxy_index || b == r.proxy_index)) return a == r.proxy_index;
        return a < b;
    });

    r.diff.resize(n > 0 ? n - 1 : 0);
    for (std::size_t i = 0; i + 1 < n; ++i) r.diff[i] = r.scores[r.order[i]] - r.scores[r.order[i + 1]];
    if (!r.diff.empty()) {
        r.raw_k = std::size_t(std::max_element(r.diff.begin(), r.diff.end()) - r.diff.begin()) + 1;
    } else {
        r.raw_k = n;
    }

    r.k = config.strategy == SelectionStrategy::fixed ? config.fixed_k : std::max(r.raw_k, config.k_min);
    r.selected.assign(r.order.begin(), r.order.begin() + r.k);
    r.parts = pool_selected(tokens, r.selected, config.parts);
    return r;
}

/// One JSON-lines record per image: proxy, k and selected indices.
template <typename T>
std::string selection_trace_line(const SelectionResult<T>& r, const std::string& image_id = {}) {
    nlohmann::json j;
    if (!image_id.empty()) j["image"] = image_id;
    j["proxy"] = r.uses_global_proxy() ? nlohmann::json(nullptr) : nlohmann::json(r.proxy_index);
    j["raw_k"] = r.raw_k;
    j["k"] = r.k;
    j["selected"] = r.selected;
    return j.dump();
}

struct OverlayStyle {
    float dim = 0.35f;
    float outline[3] = {0.f, 1.f, 0.f};
};

/// Dims unselected patch cells and draws a 1-pixel outline around selected ones.
inline Image render_selection(const Image& image, const std::vector<std::size_t>& selected, std::size_t patch,
                              const OverlayStyle& style = {}) {
    if (patch == 0 || image.height % patch != 0 || image.width % patch != 0) {
        throw ConfigError("render_selection: image extents not divisible by patch size");
    }
    const std::size_t gw = image.width / patch, n = (image.height / patch) * gw;
    std::vector<bool> chosen(n, false);
    for (auto i : selected) {
        if (i >= n) throw IndexError("render_selection: token " + std::to_string(i) + " outside grid");
        chosen[i] = true;
    }
    Image out = image;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y0 = (i / gw) * patch, x0 = (i % gw) * patch;
        for (std::size_t y = y0; y < y0 + patch; ++y)
            for (std::size_t x = x0; x < x0 + patch; ++x) {
                const bool edge = y == y0 || x == x0 || y == y0 + patch - 1 || x == x0 + patch - 1;
                for (std::size_t c = 0; c < image.channels; ++c) {
                    if (!chosen[i]) {
                        out.at(c, y, x) = image.at(c, y, x) * style.dim;
                    } else if (edge) {
                        out.at(c, y, x) = style.outline[std::min<std::size_t>(c, 2)];
                    }
                }
            }
    }
    return out;
}

}  // namespace dpef
