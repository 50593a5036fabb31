// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dpef/augment.hpp"

using namespace dpef;
namespace fs = std::filesystem;

namespace {

Image noise_image(std::size_t h, std::size_t w, Rng& rng) {
    Image im(3, h, w);
    for (auto& v : im.data) v = float(uniform(rng, 0, 1));
    return im;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dpef_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

/// Bounding box of pixels that differ between two images.
Box changed_box(const Image& a, const Image& b, std::size_t& count) {
    std::size_t y0 = a.height, y1 = 0, x0 = a.width, x1 = 0;
    count = 0;
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x) {
            bool diff = false;
            for (std::size_t c = 0; c < 3; ++c) diff |= a.at(c, y, x) != b.at(c, y, x);
            if (diff) {
                ++count;
                y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
            }
        }
    if (!count) return {};
    return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

bool is_tight(const MaskEntry& m) {
    bool top = false, bottom = false, left = false, right = false;
    for (std::size_t x = 0; x < m.mask_w; ++x) top |= m.coverage.at(0, x), bottom |= m.coverage.at(m.mask_h - 1, x);
    for (std::size_t y = 0; y < m.mask_h; ++y) left |= m.coverage.at(y, 0), right |= m.coverage.at(y, m.mask_w - 1);
    return top && bottom && left && right;
}

}  // namespace

TEST(MaskBank, LoadsEveryValidFile) {
    TempDir dir("bank100");
    auto synth = synth_masks(3, 100);
    save_mask_bank(synth, dir.path);
    auto bank = load_mask_bank(dir.path);
    ASSERT_EQ(bank.size(), 100u);
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_EQ(bank[i].mask_h, synth[i].mask_h);
        EXPECT_EQ(bank[i].coverage, synth[i].coverage);
    }
}

TEST(MaskBank, SkipsTransparentAndUnreadableFiles) {
    TempDir dir("bankskip");
    Image im(3, 8, 8, 0.5f);
    Mask empty(8, 8), some(8, 8);
    some.set(2, 3, true);
    write_png(dir.path / "a_empty.png", im, &empty);
    write_png(dir.path / "b_ok.png", im, &some);
    std::ofstream(dir.path / "c_garbage.png") << "not a png";
    std::vector<std::string> warnings;
    auto bank = load_mask_bank(dir.path, [&](const std::string& w) { warnings.push_back(w); });
    ASSERT_EQ(bank.size(), 1u);
    EXPECT_EQ(bank[0].source, "b_ok.png");
    EXPECT_EQ(warnings.size(), 2u);
}

TEST(MaskBank, CropsLooseInputToTightBox) {
    TempDir dir("banktight");
    Rng rng = make_rng(4);
    Image im = noise_image(30, 20, rng);
    Mask cov(30, 20);
    for (std::size_t y = 7; y < 19; ++y)
        for (std::size_t x = 4; x < 11; ++x)
            if ((x + y) % 3) cov.set(y, x, true);
    write_png(dir.path / "loose.png", im, &cov);
    auto bank = load_mask_bank(dir.path);
    ASSERT_EQ(bank.size(), 1u);
    // Oracle: recompute the extreme covered coordinates.
    std::size_t y0 = 99, y1 = 0, x0 = 99, x1 = 0;
    for (std::size_t y = 0; y < 30; ++y)
        for (std::size_t x = 0; x < 20; ++x)
            if (cov.at(y, x)) y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
    EXPECT_EQ(bank[0].mask_h, y1 - y0 + 1);
    EXPECT_EQ(bank[0].mask_w, x1 - x0 + 1);
    EXPECT_TRUE(is_tight(bank[0]));
    EXPECT_EQ(bank[0].coverage.at(0, 0), cov.at(y0, x0));
}

TEST(MaskBank, EmptyBankIsConfigError) {
    TempDir dir("bankempty");
    EXPECT_THROW(load_mask_bank(dir.path, [](const std::string&) {}), ConfigError);
}

TEST(SynthMasks, DeterministicForSeed) {
    auto a = synth_masks(11, 50), b = synth_masks(11, 50);
    ASSERT_EQ(a.size(), 50u);
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_EQ(a[i].texture, b[i].texture);
        EXPECT_EQ(a[i].coverage, b[i].coverage);
    }
}

TEST(SynthMasks, BothAspectBranchesPresent) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto bank = synth_masks(seed, 10);
        std::size_t tall = 0;
        for (const auto& m : bank) tall += m.tall();
        EXPECT_GE(tall, 1u);
        EXPECT_LT(tall, 10u);
    }
}

TEST(SynthMasks, EntriesSatisfyInvariants) {
    for (const auto& m : synth_masks(5, 200)) {
        EXPECT_GT(m.coverage.count(), 0u);
        EXPECT_EQ(m.texture.height, m.coverage.height);
        EXPECT_EQ(m.texture.width, m.coverage.width);
        EXPECT_EQ(m.mask_h, m.coverage.height);
        EXPECT_EQ(m.mask_w, m.coverage.width);
        EXPECT_TRUE(is_tight(m));
    }
}

TEST(Roa, ContractOverSeededDraws) {
    auto bank = synth_masks(7, 200);
    Rng irng = make_rng(8);
    const Image base = noise_image(256, 128, irng);
    RoaParams params;
    for (std::uint64_t draw = 0; draw < 300; ++draw) {
        Rng rng = make_rng(99, {draw});
        auto r = roa(base, bank, params, rng);
        ASSERT_TRUE(r.plan.valid);
        const Box& b = r.plan.box;
        const std::size_t area = b.w * b.h;
        EXPECT_GE(area + 256, std::size_t(0.5 * 256 * 128));
        EXPECT_LE(area, std::size_t(0.75 * 256 * 128));
        EXPECT_TRUE((b.x == 0 && b.y == 0) || (b.x == 0 && b.y + b.h == 256) || (b.x + b.w == 128 && b.y == 0));
        if (r.plan.tall) EXPECT_EQ(b.h, 256u);
        else EXPECT_EQ(b.w, 128u);

        std::size_t changed = 0;
        auto cb = changed_box(base, r.image, changed);
        if (changed) {
            EXPECT_GE(cb.x, b.x);
            EXPECT_GE(cb.y, b.y);
            EXPECT_LE(cb.x + cb.w, b.x + b.w);
            EXPECT_LE(cb.y + cb.h, b.y + b.h);
        }
        // replaced pixels == covered pixels of the scaled coverage
        Mask scaled = resize_nearest(bank[r.plan.mask_index].coverage, b.h, b.w);
        EXPECT_EQ(r.occlusion.count(), scaled.count());
        EXPECT_LE(r.occlusion.count(), area);
        for (std::size_t y = 0; y < 256; ++y)
            for (std::size_t x = 0; x < 128; ++x)
                if (r.occlusion.at(y, x)) {
                    ASSERT_TRUE(x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h);
                }
    }
}

TEST(Roa, PaperGeometryAreaRange) {
    const double area = 256.0 * 128.0;
    RoaParams p;
    EXPECT_EQ(p.area_lo * area, 16384.0);
    EXPECT_EQ(p.area_hi * area, 24576.0);
}

TEST(Roa, TallMaskSpansFullHeight) {
    auto bank = synth_masks(9, 40);
    std::vector<MaskEntry> tall;
    for (auto& m : bank)
        if (m.tall()) tall.push_back(m);
    ASSERT_FALSE(tall.empty());
    Image im(3, 256, 128, 0.5f);
    for (std::uint64_t s = 0; s < 50; ++s) {
        Rng rng = make_rng(s);
        auto r = roa(im, tall, RoaParams{}, rng);
        EXPECT_TRUE(r.plan.tall);
        EXPECT_EQ(r.plan.box.h, 256u);
        EXPECT_EQ(r.plan.box.w, std::size_t(r.plan.random_area / 256.0));
    }
}

TEST(Roa, DeterministicUnderSeed) {
    auto bank = synth_masks(1, 30);
    Rng irng = make_rng(2);
    Image im = noise_image(64, 32, irng);
    Rng a = make_rng(5), b = make_rng(5);
    EXPECT_EQ(roa(im, bank, RoaParams{}, a).image, roa(im, bank, RoaParams{}, b).image);
}

TEST(Roa, FullCoverageEqualsCutPaste) {
    auto bank = synth_masks(12, 20);
    for (auto& m : bank) m.coverage = Mask(m.mask_h, m.mask_w, true);
    Rng irng = make_rng(3);
    Image im = noise_image(64, 32, irng);
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng a = make_rng(s), b = make_rng(s);
        EXPECT_EQ(roa(im, bank, RoaParams{}, a).image, cut_paste(im, bank, RoaParams{}, b).image);
    }
}

TEST(Roa, DegenerateExtentPassesThroughWithWarning) {
    auto bank = synth_masks(1, 8);
    Image im(3, 1, 1, 0.3f);
    std::vector<std::string> warnings;
    Rng rng = make_rng(1);
    auto r = roa(im, bank, RoaParams{}, rng, [&](const std::string& w) { warnings.push_back(w); });
    EXPECT_FALSE(r.plan.valid);
    EXPECT_EQ(r.image, im);
    EXPECT_EQ(warnings.size(), 1u);
}

TEST(Roa, EmptyBankThrows) {
    Rng rng = make_rng(1);
    EXPECT_THROW(roa(Image(3, 8, 8), {}, RoaParams{}, rng), ConfigError);
}

TEST(CutPaste, SharesBoxAndReplacesWholeRectangle) {
    auto bank = synth_masks(21, 50);
    Rng irng = make_rng(22);
    Image im = noise_image(256, 128, irng);
    for (std::uint64_t s = 0; s < 40; ++s) {
        Rng a = make_rng(s), b = make_rng(s);
        auto r = roa(im, bank, RoaParams{}, a);
        auto c = cut_paste(im, bank, RoaParams{}, b);
        ASSERT_EQ(r.plan.box, c.plan.box);
        ASSERT_EQ(r.plan.mask_index, c.plan.mask_index);
        const Box& bx = c.plan.box;
        EXPECT_EQ(c.occlusion.count(), bx.w * bx.h);
        for (std::size_t y = 0; y < 256; ++y)
            for (std::size_t x = 0; x < 128; ++x) {
                const bool inside = x >= bx.x && x < bx.x + bx.w && y >= bx.y && y < bx.y + bx.h;
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    if (!inside) {
                        ASSERT_EQ(c.image.at(ch, y, x), im.at(ch, y, x));
                    } else if (r.occlusion.at(y, x)) {
                        ASSERT_EQ(c.image.at(ch, y, x), r.image.at(ch, y, x));
                    } else {
                        ASSERT_EQ(r.image.at(ch, y, x), im.at(ch, y, x));
                    }
                }
            }
    }
}

TEST(RandomErase, ZeroProbabilityIsIdentity) {
    Rng irng = make_rng(1);
    Image im = noise_image(64, 32, irng);
    RandomEraseParams p;
    p.probability = 0;
    Rng rng = make_rng(2);
    auto r = random_erase(im, rng, p);
    EXPECT_FALSE(r.applied);
    EXPECT_EQ(r.image, im);
}

TEST(RandomErase, RegionWithinBoundsAndRanges) {
    Image im(3, 64, 32, 2.0f);  // sentinel value never produced by the noise fill
    RandomEraseParams p;
    p.probability = 1;
    for (std::uint64_t s = 0; s < 200; ++s) {
        Rng rng = make_rng(s);
        auto r = random_erase(im, rng, p);
        if (!r.applied) continue;
        const Box& b = r.box;
        ASSERT_LE(b.x + b.w, 32u);
        ASSERT_LE(b.y + b.h, 64u);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < 64; ++y)
                for (std::size_t x = 0; x < 32; ++x) {
                    const bool inside = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
                    float v = r.image.at(c, y, x);
                    if (inside) {
                        ASSERT_TRUE(v >= 0.f && v <= 1.f);
                    } else {
                        ASSERT_EQ(v, 2.0f);
                    }
                }
    }
}

TEST(RandomErase, DefaultsFollowCommonRecipe) {
    RandomEraseParams p;
    EXPECT_DOUBLE_EQ(p.area_lo, 0.02);
    EXPECT_DOUBLE_EQ(p.area_hi, 0.4);
    EXPECT_DOUBLE_EQ(p.aspect_lo, 0.3);
    EXPECT_NEAR(p.aspect_hi, 3.33, 0.01);
}
