// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "dpef/dpsm.hpp"
#include "test_util.hpp"

using namespace dpef;
using dpef::testing::random_unit_rows;

namespace {

TokenSet<double> make_tokens(Tensor<double> cls, Tensor<double> patches, std::size_t grid_w = 4) {
    TokenSet<double> t;
    t.cls = std::move(cls);
    t.patches = std::move(patches);
    for (std::size_t i = 0; i < t.patches.rows(); ++i) t.grid.push_back({i / grid_w, i % grid_w});
    return t;
}

TokenSet<double> random_tokens(std::size_t n, std::size_t c, Rng& rng) {
    return make_tokens(random_unit_rows(1, c, rng), random_unit_rows(n, c, rng));
}

Tensor<double> unit_angles(const std::vector<double>& angles) {
    std::vector<double> d;
    for (double a : angles) {
        d.push_back(std::cos(a));
        d.push_back(std::sin(a));
    }
    return Tensor<double>({angles.size(), 2}, d);
}

struct Reference {
    std::size_t proxy;
    std::vector<std::size_t> order;
    std::size_t raw_k;
    std::size_t k;
};

/// Selection-sort reference: repeatedly extract the best remaining token.
Reference reference_select(const TokenSet<double>& t, std::size_t k_min) {
    const std::size_t n = t.size(), c = t.dim();
    auto dot = [&](const double* a, const double* b) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += a[j] * b[j];
        return s;
    };
    const double* P = t.patches.data().data();
    Reference r{};
    double best = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        double s = dot(t.cls.data().data(), P + i * c);
        if (s > best) best = s, r.proxy = i;
    }
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) score[i] = dot(P + r.proxy * c, P + i * c);
    score[r.proxy] = std::max(score[r.proxy], *std::max_element(score.begin(), score.end()));

    std::vector<bool> taken(n, false);
    for (std::size_t step = 0; step < n; ++step) {
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (pick == n || score[i] > score[pick] || (score[i] == score[pick] && i == r.proxy)) pick = i;
        }
        taken[pick] = true;
        r.order.push_back(pick);
    }
    double best_d = -1;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double d = score[r.order[i]] - score[r.order[i + 1]];
        if (d > best_d) best_d = d, r.raw_k = i + 1;
    }
    r.k = std::max(r.raw_k, k_min);
    return r;
}

SelectionConfig dynamic(std::size_t k_min, std::size_t parts = 1) {
    SelectionConfig c;
    c.k_min = k_min;
    c.parts = parts;
    return c;
}

}  // namespace

TEST(FindProxy, ExactCopyOfClassTokenWins) {
    Rng rng = make_rng(1);
    auto patches = random_unit_rows(12, 6, rng);
    auto cls = slice_rows(patches, 7, 8);
    EXPECT_EQ(find_proxy(make_tokens(cls, patches)), 7u);
}

TEST(FindProxy, IdenticalTokensTieToZero) {
    auto patches = Tensor<double>({5, 2}, {0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8});
    EXPECT_EQ(find_proxy(make_tokens(Tensor<double>({1, 2}, {1, 0}), patches)), 0u);
}

TEST(FindProxy, MatchesExhaustiveScan) {
    Rng rng = make_rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        auto t = random_tokens(8 + uniform_index(rng, 40), 8, rng);
        std::size_t best = 0;
        double bs = -2;
        for (std::size_t i = 0; i < t.size(); ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 8; ++j) s += t.cls[j] * t.patches.at(i, j);
            if (s > bs) bs = s, best = i;
        }
        EXPECT_EQ(find_proxy(t), best);
    }
}

TEST(FindProxy, GlobalSourceReturnsSentinel) {
    Rng rng = make_rng(3);
    EXPECT_EQ(find_proxy(random_tokens(4, 3, rng), ProxySource::global_token), kGlobalProxy);
}

TEST(Select, TwoOrthogonalClustersSplitExactly) {
    // Five copies of u, seven of v, f_g = u.
    auto patches = unit_angles({0, 0, 0, 0, 0, std::numbers::pi / 2, std::numbers::pi / 2, std::numbers::pi / 2,
                                std::numbers::pi / 2, std::numbers::pi / 2, std::numbers::pi / 2, std::numbers::pi / 2});
    auto r = select(make_tokens(unit_angles({0}), patches), dynamic(1));
    EXPECT_EQ(r.k, 5u);
    EXPECT_EQ(r.raw_k, 5u);
    EXPECT_EQ(r.selected, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(r.scores[i], 1.0, 1e-15);
    for (std::size_t i = 5; i < 12; ++i) EXPECT_NEAR(r.scores[i], 0.0, 1e-15);
}

TEST(Select, FloorOverridesSmallRawSplit) {
    // Ten tight tokens near the class token, then a wide gap, then 54 more.
    std::vector<double> angles;
    for (int i = 0; i < 10; ++i) angles.push_back(0.01 * i);
    for (int i = 0; i < 54; ++i) angles.push_back(1.0 + 0.01 * i);
    auto t = make_tokens(unit_angles({0}), unit_angles(angles), 8);
    auto ref = reference_select(t, 48);
    EXPECT_EQ(ref.raw_k, 10u);
    auto r = select(t, dynamic(48, 4));
    EXPECT_EQ(r.raw_k, 10u);
    EXPECT_EQ(r.k, 48u);
    EXPECT_EQ(r.selected.size(), 48u);
    EXPECT_EQ(r.parts.shape(), (Shape{4, 2}));
}

TEST(Select, MatchesReferenceOnRandomUnitTokens) {
    Rng rng = make_rng(4);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 32;
        const std::size_t k_min = 1 + uniform_index(rng, n);
        auto t = random_tokens(n, 16, rng);
        auto r = select(t, dynamic(k_min));
        auto ref = reference_select(t, k_min);
        ASSERT_EQ(r.proxy_index, ref.proxy);
        ASSERT_EQ(r.order, ref.order);
        ASSERT_EQ(r.raw_k, ref.raw_k);
        ASSERT_EQ(r.k, ref.k);
        ASSERT_EQ(r.selected, std::vector<std::size_t>(ref.order.begin(), ref.order.begin() + ref.k));
    }
}

TEST(Select, ResultInvariantsHold) {
    Rng rng = make_rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 8 + uniform_index(rng, 57);
        auto t = random_tokens(n, 12, rng);
        auto r = select(t, dynamic(1 + uniform_index(rng, n)));
        ASSERT_EQ(r.diff.size(), n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            EXPECT_GE(r.diff[i], 0.0);
            EXPECT_EQ(r.diff[i], r.scores[r.order[i]] - r.scores[r.order[i + 1]]);
        }
        EXPECT_NE(std::find(r.selected.begin(), r.selected.end(), r.proxy_index), r.selected.end());
        EXPECT_EQ(r.scores[r.proxy_index], *std::max_element(r.scores.begin(), r.scores.end()));
        for (double s : r.scores) {
            EXPECT_LE(s, 1.0 + 1e-12);
            EXPECT_GE(s, -1.0 - 1e-12);
        }
        // selected == tokens carrying the top-k scores
        double kth = r.scores[r.selected.back()];
        for (std::size_t i = 0; i < n; ++i) {
            bool in = std::find(r.selected.begin(), r.selected.end(), i) != r.selected.end();
            if (r.scores[i] > kth) { EXPECT_TRUE(in); }
            if (r.scores[i] < kth) { EXPECT_FALSE(in); }
        }
    }
}

TEST(Select, KIsMonotoneInFloor) {
    Rng rng = make_rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        auto t = random_tokens(24, 8, rng);
        std::size_t prev = 0, raw = select(t, dynamic(1)).raw_k;
        for (std::size_t k_min = 1; k_min <= 24; ++k_min) {
            auto k = select(t, dynamic(k_min)).k;
            EXPECT_GE(k, prev);
            if (raw <= k_min) { EXPECT_EQ(k, k_min); }
            prev = k;
        }
    }
}

TEST(Select, PermutationOfTokenOrderPreservesSelectionAndParts) {
    Rng rng = make_rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 20;
        auto t = random_tokens(n, 6, rng);
        auto r = select(t, dynamic(5, 4));

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> pd;
        TokenSet<double> p;
        p.cls = t.cls;
        for (auto i : perm) {
            for (std::size_t j = 0; j < 6; ++j) pd.push_back(t.patches.at(i, j));
            p.grid.push_back(t.grid[i]);
        }
        p.patches = Tensor<double>({n, 6}, pd);
        auto q = select(p, dynamic(5, 4));

        std::set<std::size_t> a(r.selected.begin(), r.selected.end()), b;
        for (auto i : q.selected) b.insert(perm[i]);
        EXPECT_EQ(a, b);
        for (std::size_t i = 0; i < r.parts.numel(); ++i) EXPECT_NEAR(r.parts[i], q.parts[i], 1e-12);
    }
}

TEST(Select, FixedAllTokensMatchesPoolAll) {
    Rng rng = make_rng(8);
    auto t = random_tokens(32, 8, rng);
    SelectionConfig c;
    c.strategy = SelectionStrategy::fixed;
    c.fixed_k = 32;
    c.parts = 4;
    auto r = select(t, c);
    EXPECT_EQ(r.k, 32u);
    auto all = pool_all_tokens(t, 4);
    auto parts = r.parts.values();
    for (std::size_t i = 0; i < parts.size(); ++i) EXPECT_NEAR(parts[i], all[i], 1e-15);
}

TEST(Select, FixedStrategyUsesConfiguredK) {
    Rng rng = make_rng(9);
    SelectionConfig c;
    c.strategy = SelectionStrategy::fixed;
    c.fixed_k = 7;
    c.parts = 2;
    auto r = select(random_tokens(16, 4, rng), c);
    EXPECT_EQ(r.k, 7u);
    EXPECT_EQ(r.selected.size(), 7u);
}

TEST(Select, GlobalProxyScoresAgainstClassToken) {
    Rng rng = make_rng(10);
    auto t = random_tokens(16, 4, rng);
    SelectionConfig c = dynamic(3);
    c.proxy_source = ProxySource::global_token;
    auto r = select(t, c);
    EXPECT_TRUE(r.uses_global_proxy());
    for (std::size_t i = 0; i < 16; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) s += t.cls[j] * t.patches.at(i, j);
        EXPECT_NEAR(r.scores[i], s, 1e-15);
    }
}

TEST(Select, InvalidConfigurations) {
    Rng rng = make_rng(11);
    auto t = random_tokens(8, 4, rng);
    EXPECT_THROW(select(t, dynamic(0)), ConfigError);
    EXPECT_THROW(select(t, dynamic(9)), ConfigError);
    SelectionConfig c;
    c.strategy = SelectionStrategy::fixed;
    c.fixed_k = 9;
    c.k_min = 1;
    EXPECT_THROW(select(t, c), ConfigError);
    EXPECT_THROW(select(random_tokens(1, 4, rng), dynamic(1)), ConfigError);
}

TEST(Select, RecordsNothingOnTapeForScoring) {
    Rng rng = make_rng(12);
    auto t = random_tokens(10, 4, rng);
    t.patches.set_requires_grad(true);
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    auto r = select(t, dynamic(2, 2));
    ASSERT_EQ(tape.size(), 1u);
    EXPECT_EQ(tape.nodes().front().op, "group_mean_rows");
}

TEST(SplitGroups, RemainderGoesToLeadingGroups) {
    std::vector<std::size_t> idx(50);
    std::iota(idx.begin(), idx.end(), 0);
    auto g = split_groups(idx, 4);
    EXPECT_EQ(g[0].size(), 13u);
    EXPECT_EQ(g[1].size(), 13u);
    EXPECT_EQ(g[2].size(), 12u);
    EXPECT_EQ(g[3].size(), 12u);
    idx.resize(48);
    for (auto& grp : split_groups(idx, 4)) EXPECT_EQ(grp.size(), 12u);
}

TEST(PoolSelected, HandAveragedGroups) {
    auto patches = Tensor<double>({8, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    auto t = make_tokens(Tensor<double>({1, 2}, {1, 0}), patches);
    // k=6 in score order; raster order is 0,2,3,5,6,7 -> groups {0,2},{3,5},{6,7}.
    auto f = pool_selected(t, std::vector<std::size_t>{7, 2, 5, 0, 6, 3}, 3);
    std::vector<double> expect = {3, 4, 9, 10, 14, 15};
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(f[i], expect[i], 1e-12);
}

TEST(PoolSelected, TooFewTokensThrows) {
    auto t = make_tokens(Tensor<double>({1, 2}, {1, 0}), Tensor<double>({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1}));
    EXPECT_THROW(pool_selected(t, std::vector<std::size_t>{0, 1}, 3), SelectionTooSmallError);
}

TEST(RenderSelection, AllSelectedOutlinesEveryCell) {
    Rng rng = make_rng(13);
    Image im(3, 16, 8);
    for (auto& v : im.data) v = float(uniform(rng, 0, 1));
    std::vector<std::size_t> all(8);
    std::iota(all.begin(), all.end(), 0);
    auto out = render_selection(im, all, 4);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
            bool edge = y % 4 == 0 || y % 4 == 3 || x % 4 == 0 || x % 4 == 3;
            for (std::size_t c = 0; c < 3; ++c) {
                if (edge) {
                    EXPECT_EQ(out.at(c, y, x), c == 1 ? 1.f : 0.f);
                } else {
                    EXPECT_EQ(out.at(c, y, x), im.at(c, y, x));
                }
            }
        }
}

TEST(RenderSelection, CellsMatchSelectedIndices) {
    Image im(3, 16, 8, 0.8f);
    std::vector<std::size_t> sel = {1, 4, 6};
    auto out = render_selection(im, sel, 4);
    for (std::size_t i = 0; i < 8; ++i) {
        bool chosen = std::find(sel.begin(), sel.end(), i) != sel.end();
        const std::size_t y0 = (i / 2) * 4, x0 = (i % 2) * 4;
        // interior pixel: untouched if selected, dimmed otherwise
        EXPECT_FLOAT_EQ(out.at(0, y0 + 1, x0 + 1), chosen ? 0.8f : 0.8f * 0.35f);
        EXPECT_FLOAT_EQ(out.at(1, y0, x0), chosen ? 1.f : 0.8f * 0.35f);
    }
}

TEST(SelectionTrace, EmitsOneJsonRecord) {
    auto patches = unit_angles({0, 0, 0, 1.5, 1.5});
    auto r = select(make_tokens(unit_angles({0}), patches), dynamic(1));
    auto j = nlohmann::json::parse(selection_trace_line(r, "img7"));
    EXPECT_EQ(j["image"], "img7");
    EXPECT_EQ(j["proxy"], 0);
    EXPECT_EQ(j["k"], 3);
    EXPECT_EQ(j["selected"].size(), 3u);
}
