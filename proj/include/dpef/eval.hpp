// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dpef/dataset.hpp"
#include "dpef/errors.hpp"
#include "dpef/model.hpp"
#include "dpef/rng.hpp"

namespace dpef {

struct RetrievalMetrics {
    std::vector<double> cmc;           // cmc[r] = fraction of queries matched within rank r + 1
    double map = 0;
    std::vector<double> average_precision;  // per evaluated query
    std::size_t evaluated = 0;
    std::size_t skipped = 0;           // queries with no valid positive

    double rank(std::size_t r) const { return r >= 1 && r <= cmc.size() ? cmc[r - 1] : 0.0; }
};

/// 1 - cosine similarity.
inline double cosine_distance(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw DimensionError("cosine_distance: length mismatch");
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * a[i];
        bb += double(b[i]) * b[i];
    }
    const double den = std::sqrt(aa) * std::sqrt(bb);
    return 1.0 - (den > 0 ? ab / den : 0.0);
}

/// CMC and mAP from a query x gallery distance matrix (row-major).
/// Gallery entries sharing both identity and camera with the query are
/// excluded; ties keep gallery order.
inline RetrievalMetrics retrieval_metrics(const std::vector<double>& dist, std::size_t nq, std::size_t ng,
                                          const std::vector<std::size_t>& q_ids, const std::vector<std::size_t>& q_cams,
                                          const std::vector<std::size_t>& g_ids, const std::vector<std::size_t>& g_cams,
                                          std::size_t max_rank = 10) {
    if (dist.size() != nq * ng || q_ids.size() != nq || q_cams.size() != nq || g_ids.size() != ng ||
        g_cams.size() != ng) {
        throw DimensionError("retrieval_metrics: inconsistent extents");
    }
    RetrievalMetrics m;
    std::vector<double> hits(max_rank, 0.0);
    std::vector<std::size_t> order(ng);
    for (std::size_t q = 0; q < nq; ++q) {
        std::iota(order.begin(), order.end(), 0);
        const double* row = dist.data() + q * ng;
        std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
        std::size_t rank = 0, positives = 0, first_hit = 0;
        double ap = 0;
        bool found = false;
        for (auto g : order) {
            if (g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q]) continue;
            ++rank;
            if (g_ids[g] == q_ids[q]) {
                ++positives;
                ap += double(positives) / double(rank);
                if (!found) first_hit = rank, found = true;
            }
        }
        if (positives == 0) {
            ++m.skipped;
            continue;
        }
        ++m.evaluated;
        m.average_precision.push_back(ap / double(positives));
        for (std::size_t r = first_hit; r <= max_rank; ++r) hits[r - 1] += 1;
    }
    if (m.evaluated == 0) throw DataError("retrieval_metrics: no query has a valid positive");
    m.cmc.resize(max_rank);
    for (std::size_t r = 0; r < max_rank; ++r) m.cmc[r] = hits[r] / double(m.evaluated);
    m.map = std::accumulate(m.average_precision.begin(), m.average_precision.end(), 0.0) / double(m.evaluated);
    return m;
}

template <typename T>
std::vector<std::vector<float>> extract_descriptors(const Model<T>& model, const std::vector<IdentitySample>& samples) {
    std::vector<std::vector<float>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(model.descriptor(s.image));
    return out;
}

template <typename T>
RetrievalMetrics evaluate(const Model<T>& model, const Dataset& data, std::size_t max_rank = 10) {
    const auto qf = extract_descriptors(model, data.query), gf = extract_descriptors(model, data.gallery);
    std::vector<double> dist(qf.size() * gf.size());
    for (std::size_t q = 0; q < qf.size(); ++q)
        for (std::size_t g = 0; g < gf.size(); ++g) dist[q * gf.size() + g] = cosine_distance(qf[q], gf[g]);
    std::vector<std::size_t> qi, qc, gi, gc;
    for (const auto& s : data.query) qi.push_back(s.identity), qc.push_back(s.camera);
    for (const auto& s : data.gallery) gi.push_back(s.identity), gc.push_back(s.camera);
    return retrieval_metrics(dist, qf.size(), gf.size(), qi, qc, gi, gc, max_rank);
}

/// Patch cells whose pixels are mostly body, in token order.
inline std::vector<bool> body_cells(const Mask& body, std::size_t patch) {
    if (patch == 0 || body.height % patch || body.width % patch) throw DimensionError("body_cells: extents not divisible by patch");
    const std::size_t gh = body.height / patch, gw = body.width / patch;
    std::vector<bool> cells(gh * gw);
    for (std::size_t r = 0; r < gh; ++r)
        for (std::size_t c = 0; c < gw; ++c) {
            std::size_t on = 0;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x) on += body.at(r * patch + y, c * patch + x);
            cells[r * gw + c] = 2 * on > patch * patch;
        }
    return cells;
}

struct SelectionQuality {
    double precision = 0;          // mean over images of |selected & body| / k
    double random_precision = 0;   // same statistic for uniform random picks of equal k
    double body_fraction = 0;      // mean fraction of body cells
    double mean_k = 0;
    std::size_t images = 0;
};

/// |selected & body| / |selected|.
inline double selection_precision(const std::vector<std::size_t>& selected, const std::vector<bool>& cells) {
    if (selected.empty()) throw DataError("selection_precision: empty selection");
    std::size_t on = 0;
    for (auto i : selected) {
        if (i >= cells.size()) throw IndexError("selection_precision: token index out of range");
        on += cells[i];
    }
    return double(on) / double(selected.size());
}

/// Monte-Carlo mean precision of uniform random k-subsets of the cells.
inline double random_selection_precision(const std::vector<bool>& cells, std::size_t k, Rng& rng,
                                         std::size_t draws = 200) {
    if (k == 0 || k > cells.size()) throw DimensionError("random_selection_precision: k outside [1, N]");
    if (draws == 0) throw ConfigError("random_selection_precision: draws must be positive");
    std::vector<std::size_t> idx(cells.size());
    double acc = 0;
    for (std::size_t d = 0; d < draws; ++d) {
        std::iota(idx.begin(), idx.end(), 0);
        std::size_t hit = 0;
        for (std::size_t j = 0; j < k; ++j) {
            std::swap(idx[j], idx[j + uniform_index(rng, idx.size() - j)]);
            hit += cells[idx[j]];
        }
        acc += double(hit) / double(k);
    }
    return acc / double(draws);
}

/// Fraction of selected tokens that land on body cells, against a
/// uniform-random selection of the same size. Samples without a body mask
/// are skipped.
template <typename T>
SelectionQuality selection_quality(const Model<T>& model, const std::vector<IdentitySample>& samples,
                                   std::uint64_t seed = 0, std::size_t random_draws = 200) {
    typename Tape<T>::Pause no_record;
    SelectionQuality q;
    const std::size_t patch = model.config().encoder.patch;
    Rng rng = make_rng(seed, {0x5E1});
    for (const auto& s : samples) {
        if (!s.body) continue;
        const auto cells = body_cells(*s.body, patch);
        const auto out = model.forward(s.image);
        const auto& sel = out.selection.selected;
        q.precision += selection_precision(sel, cells);
        q.random_precision += random_selection_precision(cells, sel.size(), rng, random_draws);
        q.body_fraction += double(std::count(cells.begin(), cells.end(), true)) / double(cells.size());
        q.mean_k += double(sel.size());
        ++q.images;
    }
    if (q.images == 0) throw DataError("selection_quality: no samples carry a body mask");
    const double n = double(q.images);
    q.precision /= n;
    q.random_precision /= n;
    q.body_fraction /= n;
    q.mean_k /= n;
    return q;
}

}  // namespace dpef
