// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "dpef/dataset.hpp"
#include "dpef/png_io.hpp"

using namespace dpef;

namespace {

SynthOptions clean_opts() {
    SynthOptions o;
    o.occlude_queries = false;
    return o;
}

std::vector<const IdentitySample*> all_samples(const Dataset& ds) {
    std::vector<const IdentitySample*> out;
    for (const auto* split : {&ds.train, &ds.query, &ds.gallery})
        for (const auto& s : *split) out.push_back(&s);
    return out;
}

}  // namespace

TEST(SynthDataset, SameSeedIsBitIdentical) {
    const auto a = synth_dataset(7), b = synth_dataset(7);
    const auto sa = all_samples(a), sb = all_samples(b);
    ASSERT_EQ(sa.size(), sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        EXPECT_EQ(sa[i]->image, sb[i]->image);
        EXPECT_EQ(*sa[i]->body, *sb[i]->body);
        EXPECT_EQ(sa[i]->identity, sb[i]->identity);
        EXPECT_EQ(sa[i]->camera, sb[i]->camera);
    }
    EXPECT_NE(synth_dataset(8).train.front().image, a.train.front().image);
}

TEST(SynthDataset, SplitSizesAndCameras) {
    const auto ds = synth_dataset(0);
    EXPECT_EQ(ds.num_ids, 20u);
    EXPECT_EQ(ds.train.size() + ds.query.size() + ds.gallery.size(), 160u);
    EXPECT_EQ(ds.query.size(), 40u);
    EXPECT_EQ(ds.gallery.size(), 40u);
    for (const auto& q : ds.query) {
        EXPECT_EQ(q.camera, 0u);
        std::size_t positives = 0;
        for (const auto& g : ds.gallery) positives += g.identity == q.identity && g.camera != q.camera;
        EXPECT_GE(positives, 1u);
    }
    std::set<std::size_t> train_ids;
    for (const auto& s : ds.train) train_ids.insert(s.identity);
    EXPECT_EQ(train_ids.size(), 20u);
}

TEST(SynthDataset, BodyMaskCoverageBetween20And70Percent) {
    const auto ds = synth_dataset(3, clean_opts());
    for (const auto* s : all_samples(ds)) {
        ASSERT_TRUE(s->body.has_value());
        const double frac = double(s->body->count()) / double(s->image.area());
        EXPECT_GE(frac, 0.20) << s->name;
        EXPECT_LE(frac, 0.70) << s->name;
    }
}

TEST(SynthDataset, OccludedQueriesLoseBodyPixels) {
    const auto clean = synth_dataset(4, clean_opts()), occ = synth_dataset(4);
    ASSERT_EQ(clean.query.size(), occ.query.size());
    for (std::size_t i = 0; i < occ.query.size(); ++i) {
        EXPECT_NE(clean.query[i].image, occ.query[i].image);
        EXPECT_LT(occ.query[i].body->count(), clean.query[i].body->count());
    }
}

TEST(SynthDataset, SignaturesRespectDistanceFloor) {
    SynthOptions o;
    const auto sigs = synth_signatures(11, o);
    ASSERT_EQ(sigs.size(), o.num_ids);
    for (std::size_t a = 0; a < sigs.size(); ++a)
        for (std::size_t b = a + 1; b < sigs.size(); ++b) {
            double ss = 0;
            for (int c = 0; c < 3; ++c) {
                ss += std::pow(double(sigs[a].torso[c]) - sigs[b].torso[c], 2);
                ss += std::pow(double(sigs[a].legs[c]) - sigs[b].legs[c], 2);
            }
            EXPECT_GE(std::sqrt(ss), o.signature_floor);
        }
}

TEST(SynthDataset, RejectsDegenerateOptions) {
    SynthOptions o;
    o.num_ids = 1;
    EXPECT_THROW(synth_dataset(0, o), ConfigError);
    o = {};
    o.cams = 1;
    EXPECT_THROW(synth_dataset(0, o), ConfigError);
    o = {};
    o.queries_per_id = 4;
    o.gallery_per_id = 4;
    EXPECT_THROW(synth_dataset(0, o), ConfigError);
}

TEST(PkSample, SixteenByFourGivesSixtyFour) {
    SynthOptions o;
    o.num_ids = 20;
    const auto ds = synth_dataset(0, o);
    Rng rng = make_rng(1);
    const auto batch = pk_sample(ds.train, 16, 4, rng);
    ASSERT_EQ(batch.size(), 64u);
    std::map<std::size_t, std::size_t> per_id;
    for (auto i : batch) ++per_id[ds.train[i].identity];
    EXPECT_EQ(per_id.size(), 16u);
    for (const auto& [id, n] : per_id) EXPECT_EQ(n, 4u);
}

TEST(PkSample, OneImagePerIdentity) {
    const auto ds = synth_dataset(0);
    Rng rng = make_rng(2);
    const auto batch = pk_sample(ds.train, 10, 1, rng);
    std::set<std::size_t> ids;
    for (auto i : batch) ids.insert(ds.train[i].identity);
    EXPECT_EQ(batch.size(), 10u);
    EXPECT_EQ(ids.size(), 10u);
}

TEST(PkSample, ResamplesWithReplacementWhenShort) {
    std::vector<IdentitySample> s(3);
    s[0].identity = 0;
    s[1].identity = 1;
    s[2].identity = 1;
    Rng rng = make_rng(3);
    const auto batch = pk_sample(s, 2, 5, rng);
    ASSERT_EQ(batch.size(), 10u);
    std::size_t zeros = 0;
    for (auto i : batch) zeros += i == 0;
    EXPECT_EQ(zeros, 5u);
}

TEST(PkSample, DistinctImagesWhenEnoughAvailable) {
    const auto ds = synth_dataset(0);
    Rng rng = make_rng(4);
    const auto batch = pk_sample(ds.train, 8, 4, rng);
    EXPECT_EQ(std::set<std::size_t>(batch.begin(), batch.end()).size(), batch.size());
}

TEST(PkSample, ErrorsOnTooFewIdentitiesOrZeroK) {
    const auto ds = synth_dataset(0);
    Rng rng = make_rng(5);
    EXPECT_THROW(pk_sample(ds.train, 21, 4, rng), ConfigError);
    EXPECT_THROW(pk_sample(ds.train, 0, 4, rng), ConfigError);
    EXPECT_THROW(pk_sample(ds.train, 4, 0, rng), ConfigError);
}

TEST(PkSample, LabelHistogramUniformWithinThreeSigma) {
    const auto ds = synth_dataset(0);
    const std::size_t ids = 20, k_id = 8, k_img = 4, batches = 1000;
    std::vector<double> hist(ids, 0);
    Rng rng = make_rng(6);
    for (std::size_t b = 0; b < batches; ++b)
        for (auto i : pk_sample(ds.train, k_id, k_img, rng)) hist[ds.train[i].identity] += 1;
    // each identity enters a batch with p = k_id / ids and then contributes k_img labels
    const double p = double(k_id) / ids;
    const double mean = batches * p * k_img, sd = k_img * std::sqrt(batches * p * (1 - p));
    for (std::size_t id = 0; id < ids; ++id) EXPECT_NEAR(hist[id], mean, 3 * sd) << "identity " << id;
}

TEST(FolderDataset, LoadsSplitsAndRelabelsDensely) {
    const auto root = std::filesystem::temp_directory_path() / "dpef_folder_dataset";
    std::filesystem::remove_all(root);
    for (const char* sub : {"train", "query", "gallery"}) std::filesystem::create_directories(root / sub);
    Image img(3, 16, 8, 0.5f);
    write_png(root / "train" / "0042_1_0.png", img);
    write_png(root / "train" / "0007_2_0.png", img);
    write_png(root / "query" / "0042_0_1.png", img);
    write_png(root / "gallery" / "0007_1_2.png", img);
    write_png(root / "gallery" / "-1_1_3.png", img);
    write_png(root / "gallery" / "notes.png", img);

    const auto ds = load_folder_dataset(root, 32, 16);
    EXPECT_EQ(ds.num_ids, 2u);
    ASSERT_EQ(ds.train.size(), 2u);
    ASSERT_EQ(ds.query.size(), 1u);
    ASSERT_EQ(ds.gallery.size(), 2u);
    EXPECT_EQ(ds.train[0].image.height, 32u);
    EXPECT_EQ(ds.query[0].identity, 1u);  // 42 sorts after 7
    EXPECT_EQ(ds.query[0].camera, 0u);
    std::set<std::size_t> gallery_ids;
    for (const auto& g : ds.gallery) gallery_ids.insert(g.identity);
    EXPECT_TRUE(gallery_ids.count(0));
    EXPECT_TRUE(gallery_ids.count(2));  // distractor id gets a fresh label
    std::filesystem::remove_all(root);
}

TEST(FolderDataset, EmptyRootIsAnError) {
    const auto root = std::filesystem::temp_directory_path() / "dpef_folder_empty";
    std::filesystem::create_directories(root);
    EXPECT_THROW(load_folder_dataset(root, 32, 16), DataError);
    std::filesystem::remove_all(root);
}
