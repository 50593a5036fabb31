// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dpef/encoder.hpp"
#include "dpef/numerics.hpp"
#include "test_util.hpp"

using namespace dpef;
using dpef::testing::random_tensor;

namespace {

Image random_image(std::size_t h, std::size_t w, Rng& rng) {
    Image im(3, h, w);
    for (auto& v : im.data) v = float(uniform(rng, 0.0, 1.0));
    return im;
}

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.image_h = 16;
    c.image_w = 8;
    c.patch = 4;
    c.dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.mlp_ratio = 2.0;
    return c;
}

/// TokenSet over a 2x4 lattice with hand-picked 2-d rows.
TokenSet<double> eight_tokens() {
    TokenSet<double> t;
    t.cls = Tensor<double>({1, 2}, {1, 0});
    t.patches = Tensor<double>({8, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    for (std::size_t i = 0; i < 8; ++i) t.grid.push_back({i / 4, i % 4});
    return t;
}

}  // namespace

TEST(EncoderConfig, PaperScaleGivesOneHundredTwentyEightTokens) {
    auto c = EncoderConfig::paper_scale();
    EXPECT_NO_THROW(c.validate(4));
    EXPECT_EQ(c.grid_h(), 16u);
    EXPECT_EQ(c.grid_w(), 8u);
    EXPECT_EQ(c.num_patches(), 128u);
    EXPECT_EQ(c.dim, 768u);
}

TEST(EncoderConfig, ToyDefaults) {
    EncoderConfig c;
    EXPECT_EQ(c.num_patches(), 32u);
    EXPECT_EQ(c.dim, 64u);
    EXPECT_EQ(c.depth, 2u);
}

TEST(EncoderConfig, RejectsInvalidGeometry) {
    EncoderConfig c;
    c.image_w = 30;
    EXPECT_THROW(c.validate(), ConfigError);
    c = EncoderConfig{};
    c.heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = EncoderConfig{};
    EXPECT_THROW(c.validate(33), ConfigError);
}

TEST(Encoder, EmitsNPlusOneTokensWithRasterGrid) {
    Rng rng = make_rng(1);
    EncoderConfig cfg;
    Encoder<float> enc(cfg, rng);
    auto tokens = enc.encode(random_image(64, 32, rng));
    EXPECT_EQ(tokens.cls.shape(), (Shape{1, 64}));
    EXPECT_EQ(tokens.patches.shape(), (Shape{32, 64}));
    EXPECT_EQ(tokens.size() + 1, 33u);
    std::set<std::pair<std::size_t, std::size_t>> cells;
    for (auto g : tokens.grid) {
        EXPECT_LT(g.row, 8u);
        EXPECT_LT(g.col, 4u);
        cells.insert({g.row, g.col});
    }
    EXPECT_EQ(cells.size(), 32u);
    EXPECT_EQ(tokens.grid[5], (GridPos{1, 1}));
}

TEST(Encoder, PatchTokensHaveUnitNormAcrossBattery) {
    Rng rng = make_rng(2);
    Encoder<float> enc(EncoderConfig{}, rng);
    for (int trial = 0; trial < 20; ++trial) {
        auto tokens = enc.encode(random_image(64, 32, rng));
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            double ss = 0;
            for (std::size_t j = 0; j < tokens.dim(); ++j) ss += double(tokens.patches.at(i, j)) * tokens.patches.at(i, j);
            EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-6);
        }
        double cs = 0;
        for (auto v : tokens.cls.data()) cs += double(v) * v;
        EXPECT_NEAR(std::sqrt(cs), 1.0, 1e-6);
    }
}

TEST(Encoder, ClassTokenNormalizationCanBeDisabled) {
    Rng rng = make_rng(3);
    EncoderConfig cfg;
    cfg.normalize_cls = false;
    Encoder<float> enc(cfg, rng);
    auto tokens = enc.encode(random_image(64, 32, rng));
    double cs = 0;
    for (auto v : tokens.cls.data()) cs += double(v) * v;
    EXPECT_GT(std::abs(std::sqrt(cs) - 1.0), 1e-3);
}

TEST(Encoder, IsDeterministic) {
    Rng a = make_rng(4), b = make_rng(4);
    Encoder<float> e1(EncoderConfig{}, a), e2(EncoderConfig{}, b);
    Rng irng = make_rng(5);
    auto img = random_image(64, 32, irng);
    auto t1 = e1.encode(img), t2 = e2.encode(img);
    EXPECT_EQ(t1.patches.values(), t2.patches.values());
    EXPECT_EQ(t1.cls.values(), t2.cls.values());
    EXPECT_EQ(e1.encode(img).patches.values(), t1.patches.values());
}

TEST(Encoder, ExtentMismatchIsConfigError) {
    Rng rng = make_rng(6);
    Encoder<float> enc(EncoderConfig{}, rng);
    EXPECT_THROW(enc.encode(Image(3, 32, 32)), ConfigError);
    EXPECT_THROW(enc.encode(Image(1, 64, 32)), ConfigError);
}

TEST(Encoder, PatchEmbeddingIsLocalBeforeAttention) {
    Rng rng = make_rng(7);
    Encoder<float> enc(EncoderConfig{}, rng);
    auto img = random_image(64, 32, rng);
    auto base = enc.embed_patches(img);
    // Patch (row 2, col 1) covers pixels y in [16,24), x in [8,16).
    auto edited = img;
    edited.at(1, 19, 12) += 0.5f;
    auto moved = enc.embed_patches(edited);
    const std::size_t target = 2 * 4 + 1;
    bool target_changed = false;
    for (std::size_t i = 0; i < 32; ++i)
        for (std::size_t j = 0; j < 64; ++j) {
            if (i == target) {
                target_changed |= base.at(i, j) != moved.at(i, j);
            } else {
                EXPECT_EQ(base.at(i, j), moved.at(i, j));
            }
        }
    EXPECT_TRUE(target_changed);
}

TEST(Encoder, BlockGradientsMatchFiniteDifferences) {
    Rng rng = make_rng(8);
    auto cfg = tiny_config();
    Encoder<double> enc(cfg, rng);
    Rng irng = make_rng(9);
    auto img = random_image(16, 8, irng);
    auto wp = random_tensor({cfg.num_patches(), cfg.dim}, irng);
    auto wc = random_tensor({1, cfg.dim}, irng);

    ParamList<double> params;
    enc.collect_parameters("", params);
    std::vector<Tensor<double>> inputs;
    for (auto& [name, t] : params) inputs.push_back(t);

    GradCheckOptions opt;
    opt.max_coords_per_input = 12;
    opt.step = 1e-5;
    auto rep = grad_check<double>(
        [&](auto&) {
            auto t = enc.encode(img);
            return add(sum(mul(t.patches, wp)), sum(mul(t.cls, wc)));
        },
        inputs, opt);
    EXPECT_TRUE(rep.passed) << rep.message;
    EXPECT_GT(rep.coords_checked, 100u);
}

TEST(PoolAllTokens, MatchesHandComputedGroupMeans) {
    auto t = eight_tokens();
    auto f = pool_all_tokens(t, 4);
    EXPECT_EQ(f.shape(), (Shape{1, 8}));
    std::vector<double> expect = {2, 3, 6, 7, 10, 11, 14, 15};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(f[i], expect[i], 1e-12);
}

TEST(PoolAllTokens, FollowsRasterOrderNotInputOrder) {
    auto t = eight_tokens();
    // Swap tokens 0 and 7 together with their grid cells.
    auto d = t.patches.values();
    std::swap_ranges(d.begin(), d.begin() + 2, d.begin() + 14);
    t.patches = Tensor<double>({8, 2}, d);
    std::swap(t.grid[0], t.grid[7]);
    auto f = pool_all_tokens(t, 4);
    std::vector<double> expect = {2, 3, 6, 7, 10, 11, 14, 15};
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(f[i], expect[i], 1e-12);
}

TEST(PoolAllTokens, SinglePartIsPlainMean) {
    auto f = pool_all_tokens(eight_tokens(), 1);
    EXPECT_NEAR(f[0], 8.0, 1e-12);
    EXPECT_NEAR(f[1], 9.0, 1e-12);
}

TEST(PoolAllTokens, UnevenSplitPutsLargerGroupsFirst) {
    auto f = pool_all_tokens(eight_tokens(), 3);  // groups 3/3/2
    EXPECT_NEAR(f[0], 3.0, 1e-12);
    EXPECT_NEAR(f[2], 9.0, 1e-12);
    EXPECT_NEAR(f[4], 14.0, 1e-12);
}

TEST(PoolAllTokens, MoreThanNPartsIsConfigError) {
    EXPECT_THROW(pool_all_tokens(eight_tokens(), 9), ConfigError);
}

TEST(PoolAllTokens, RandomTokensMatchBruteForce) {
    Rng rng = make_rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 4 + uniform_index(rng, 40), c = 1 + uniform_index(rng, 6);
        const std::size_t parts = 1 + uniform_index(rng, n);
        TokenSet<double> t;
        t.patches = random_tensor({n, c}, rng);
        t.cls = random_tensor({1, c}, rng);
        for (std::size_t i = 0; i < n; ++i) t.grid.push_back({i / 4, i % 4});
        auto f = pool_all_tokens(t, parts);
        std::size_t start = 0;
        for (std::size_t g = 0; g < parts; ++g) {
            std::size_t len = n / parts + (g < n % parts ? 1 : 0);
            for (std::size_t j = 0; j < c; ++j) {
                double s = 0;
                for (std::size_t i = start; i < start + len; ++i) s += t.patches.at(i, j);
                EXPECT_NEAR(f[g * c + j], s / double(len), 1e-6);
            }
            start += len;
        }
    }
}
