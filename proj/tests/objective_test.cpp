// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dpef/numerics.hpp"
#include "dpef/objective.hpp"
#include "test_util.hpp"

using namespace dpef;
using dpef::testing::random_tensor;

namespace {

std::vector<float> randv(std::size_t d, Rng& rng) {
    std::vector<float> v(d);
    for (auto& x : v) x = float(uniform(rng, -1, 1));
    return v;
}

/// Brute-force -log softmax(z)[j] in long double.
double neg_log_softmax(const std::vector<double>& z, std::size_t j) {
    long double s = 0;
    for (double v : z) s += std::exp((long double)v);
    return double(-(z[j] - std::log(s)));
}

}  // namespace

TEST(MemoryBank, InitWithOneFeaturePerIdentity) {
    Rng rng = make_rng(1);
    std::vector<std::vector<float>> f = {randv(6, rng), randv(6, rng), randv(6, rng)};
    auto bank = MemoryBank::init(f, {0, 1, 2}, 3, 0.2);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(bank.row(j)[k], f[j][k]);
    EXPECT_TRUE(bank.initialized());
}

TEST(MemoryBank, InitWithEqualFeaturesIsIdempotent) {
    std::vector<float> v = {0.25f, -0.5f, 1.0f};
    auto bank = MemoryBank::init({v, v}, {0, 0}, 1, 0.2);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(bank.row(0)[k], v[k]);
}

TEST(MemoryBank, InitMatchesBruteForceGroupMeans) {
    Rng rng = make_rng(2);
    const std::size_t m = 7, d = 5;
    std::vector<std::vector<float>> f;
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < 60; ++i) {
        f.push_back(randv(d, rng));
        y.push_back(i < m ? i : uniform_index(rng, m));
    }
    auto bank = MemoryBank::init(f, y, m, 0.2);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < d; ++k) {
            double s = 0;
            int n = 0;
            for (std::size_t i = 0; i < f.size(); ++i)
                if (y[i] == j) s += f[i][k], ++n;
            EXPECT_NEAR(bank.row(j)[k], s / n, 1e-6);
        }
}

TEST(MemoryBank, EmptyIdentityIsDataError) {
    Rng rng = make_rng(3);
    EXPECT_THROW(MemoryBank::init({randv(3, rng)}, {0}, 2, 0.2), DataError);
}

TEST(MemoryBank, UpdateUsesMomentumTwoTenths) {
    std::vector<float> d0 = {1, 2, 3}, f = {3, -2, 0};
    auto bank = MemoryBank::init({d0}, {0}, 1, 0.2);
    bank.update(0, f);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_FLOAT_EQ(bank.row(0)[k], 0.2f * d0[k] + 0.8f * f[k]);
}

TEST(MemoryBank, MomentumOneIsFixedPoint) {
    Rng rng = make_rng(4);
    auto d0 = randv(8, rng);
    auto bank = MemoryBank::init({d0}, {0}, 1, 1.0);
    bank.update(0, randv(8, rng));
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(bank.row(0)[k], d0[k]);
}

TEST(MemoryBank, TwoUpdatesMatchClosedForm) {
    Rng rng = make_rng(5);
    const double mu = 0.2;
    auto d0 = randv(10, rng), f1 = randv(10, rng), f2 = randv(10, rng);
    auto bank = MemoryBank::init({d0}, {0}, 1, mu);
    bank.update(0, f1);
    bank.update(0, f2);
    for (std::size_t k = 0; k < 10; ++k) {
        double expect = mu * mu * d0[k] + mu * (1 - mu) * f1[k] + (1 - mu) * f2[k];
        EXPECT_NEAR(bank.row(0)[k], expect, 1e-6);
    }
}

TEST(MemoryBank, UpdateTouchesOneRowOnly) {
    Rng rng = make_rng(6);
    std::vector<std::vector<float>> f = {randv(4, rng), randv(4, rng), randv(4, rng)};
    auto bank = MemoryBank::init(f, {0, 1, 2}, 3, 0.2);
    auto before = std::vector<float>(bank.data().begin(), bank.data().end());
    bank.update(1, randv(4, rng));
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(bank.row(0)[k], before[k]);
        EXPECT_EQ(bank.row(2)[k], before[8 + k]);
    }
    EXPECT_THROW(bank.update(3, randv(4, rng)), IndexError);
}

TEST(InfoNce, SingleEntryBankGivesZero) {
    Rng rng = make_rng(7);
    auto loss = info_nce(random_tensor({1, 6}, rng), random_tensor({1, 6}, rng), {0}, 0.05);
    EXPECT_EQ(loss.item(), 0.0);
}

TEST(InfoNce, WorkedThreeEntryExample) {
    // products [2, 0, 0] at tau = 1
    auto fq = Tensor<double>({1, 2}, {1, 0});
    auto bank = Tensor<double>({3, 2}, {2, 0, 0, 1, 0, -1});
    auto loss = info_nce(fq, bank, {0}, 1.0);
    EXPECT_NEAR(loss.item(), -std::log(std::exp(2.0) / (std::exp(2.0) + 2.0)), 1e-12);
    EXPECT_NEAR(loss.item(), 0.2395, 1e-4);
}

TEST(InfoNce, MatchesBruteForceOverRandomBanks) {
    Rng rng = make_rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + uniform_index(rng, 64), d = 1 + uniform_index(rng, 16);
        const double tau = uniform(rng, 0.03, 2.0);
        auto fq = random_tensor({1, d}, rng), bank = random_tensor({m, d}, rng);
        const std::size_t j = uniform_index(rng, m);
        std::vector<double> z(m);
        for (std::size_t l = 0; l < m; ++l) {
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) s += fq[k] * bank.at(l, k);
            z[l] = s / tau;
        }
        EXPECT_NEAR(info_nce(fq, bank, {j}, tau).item(), neg_log_softmax(z, j), 1e-6);
    }
}

TEST(InfoNce, WeightScalesLossAndGradientExactly) {
    Rng rng = make_rng(9);
    auto bank = random_tensor({10, 8}, rng);
    auto base = random_tensor({1, 8}, rng);
    auto run = [&](double w, std::vector<double>& grad) {
        auto fq = Tensor<double>(base.shape(), base.values(), true);
        Tape<double> tape;
        Tensor<double> loss;
        {
            Tape<double>::Scope s(tape);
            loss = info_nce(fq, bank, {3}, 0.05, {w});
        }
        tape.backward(loss);
        grad.assign(fq.grad().begin(), fq.grad().end());
        return loss.item();
    };
    std::vector<double> g1, g3;
    double l1 = run(1.0, g1), l3 = run(0.3, g3);
    EXPECT_NEAR(l3, 0.3 * l1, 1e-15 * std::abs(l1) + 1e-300);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g3[i], 0.3 * g1[i], 1e-15 * std::abs(g1[i]) + 1e-300);
}

TEST(InfoNce, GradientReachesQueryOnly) {
    Rng rng = make_rng(10);
    auto fq = random_tensor({2, 4}, rng);
    fq.set_requires_grad(true);
    auto bank = random_tensor({5, 4}, rng);
    Tape<double> tape;
    Tensor<double> loss;
    {
        Tape<double>::Scope s(tape);
        loss = info_nce(fq, bank, {1, 4}, 0.05);
    }
    tape.backward(loss);
    EXPECT_TRUE(fq.has_grad());
    EXPECT_FALSE(bank.has_grad());
    auto tracked = bank;
    tracked.set_requires_grad(true);
    EXPECT_THROW(info_nce(fq, tracked, {0}, 0.05), ConfigError);
}

TEST(InfoNce, NonPositiveTemperatureIsConfigError) {
    Rng rng = make_rng(11);
    EXPECT_THROW(info_nce(random_tensor({1, 2}, rng), random_tensor({2, 2}, rng), {0}, 0.0), ConfigError);
    EXPECT_THROW(info_nce(random_tensor({1, 2}, rng), random_tensor({2, 2}, rng), {0}, -1.0), ConfigError);
}

TEST(InfoNce, IsNonNegative) {
    Rng rng = make_rng(12);
    for (int i = 0; i < 100; ++i) {
        auto l = info_nce(random_tensor({1, 4}, rng, -5, 5), random_tensor({6, 4}, rng), {2}, 0.1);
        EXPECT_GE(l.item(), 0.0);
    }
}

TEST(ClassificationLoss, UniformLogitsGiveLnMPerHead) {
    Rng rng = make_rng(13);
    const std::size_t m = 9, p = 4;
    std::vector<ClassifierHead<double>> heads;
    std::vector<Tensor<double>> feats;
    for (std::size_t h = 0; h < p + 3; ++h) {
        heads.emplace_back(5, m, rng);
        // Zero classifier weights make every logit equal.
        ParamList<double> ps;
        heads.back().collect_parameters("", ps);
        for (auto& v : ps[2].second.mutable_data()) v = 0;
        feats.push_back(random_tensor({4, 5}, rng));
    }
    auto terms = classification_loss(heads, feats, {0, 3, 8, 1});
    EXPECT_EQ(terms.per_head.size(), 7u);
    for (auto& t : terms.per_head) EXPECT_NEAR(t.item(), std::log(double(m)), 1e-12);
    EXPECT_NEAR(terms.total.item(), 7 * std::log(double(m)), 1e-12);
}

TEST(ClassificationLoss, MatchesBruteForceCrossEntropy) {
    Rng rng = make_rng(14);
    const std::size_t m = 6, d = 4, b = 5;
    std::vector<ClassifierHead<double>> heads;
    std::vector<Tensor<double>> feats;
    for (int h = 0; h < 3; ++h) {
        heads.emplace_back(d, m, rng);
        ParamList<double> ps;
        heads.back().collect_parameters("", ps);
        for (auto& v : ps[2].second.mutable_data()) v = uniform(rng, -1, 1);
        feats.push_back(random_tensor({b, d}, rng));
    }
    std::vector<std::size_t> y = {0, 5, 2, 2, 1};
    auto terms = classification_loss(heads, feats, y, /*training=*/true);
    double total = 0;
    for (int h = 0; h < 3; ++h) {
        ParamList<double> ps;
        heads[h].collect_parameters("", ps);
        const auto& W = ps[2].second;
        double acc = 0;
        // Batch statistics (biased variance), gamma=1, beta=0.
        std::vector<double> mean(d, 0), var(d, 0);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) mean[j] += feats[h].at(i, j) / b;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) var[j] += std::pow(feats[h].at(i, j) - mean[j], 2) / b;
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<double> z(m, 0);
            for (std::size_t c = 0; c < m; ++c)
                for (std::size_t j = 0; j < d; ++j)
                    z[c] += (feats[h].at(i, j) - mean[j]) / std::sqrt(var[j] + 1e-5) * W.at(j, c);
            acc += neg_log_softmax(z, y[i]);
        }
        EXPECT_NEAR(terms.per_head[h].item(), acc / b, 1e-6);
        total += acc / b;
    }
    EXPECT_NEAR(terms.total.item(), total, 1e-6);
}

TEST(ClassificationLoss, LabelOutOfRangeThrows) {
    Rng rng = make_rng(15);
    std::vector<ClassifierHead<double>> heads;
    heads.emplace_back(3, 4, rng);
    EXPECT_THROW(classification_loss(heads, {random_tensor({2, 3}, rng)}, {0, 4}), IndexError);
}

TEST(ClassificationLoss, GradientStepOnHeadsDescends) {
    Rng rng = make_rng(16);
    std::vector<ClassifierHead<double>> heads;
    std::vector<Tensor<double>> feats;
    for (int h = 0; h < 3; ++h) {
        heads.emplace_back(8, 5, rng);
        feats.push_back(random_tensor({10, 8}, rng));
    }
    std::vector<std::size_t> y = {0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
    ParamList<double> ps;
    for (auto& h : heads) h.collect_parameters("", ps);
    Tape<double> tape;
    Tensor<double> loss;
    {
        Tape<double>::Scope s(tape);
        loss = classification_loss(heads, feats, y).total;
    }
    tape.backward(loss);
    for (auto& [n, t] : ps) {
        auto g = t.grad();
        auto d = t.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= 0.5 * g[i];
    }
    EXPECT_LT(classification_loss(heads, feats, y).total.item(), loss.item());
}

TEST(ClassificationLoss, HeadGradientMatchesFiniteDifferences) {
    Rng rng = make_rng(17);
    ClassifierHead<double> head(6, 4, rng);
    ParamList<double> ps;
    head.collect_parameters("", ps);
    for (auto& v : ps[2].second.mutable_data()) v = uniform(rng, -1, 1);
    auto x = random_tensor({5, 6}, rng);
    std::vector<Tensor<double>> inputs = {x, ps[0].second, ps[1].second, ps[2].second};
    GradCheckOptions opt;
    opt.step = 1e-5;
    auto rep = grad_check<double>(
        [&](auto& in) { return cross_entropy(head.forward(in[0], true), {0, 1, 2, 3, 1}); }, inputs, opt);
    EXPECT_TRUE(rep.passed) << rep.message;
}

TEST(TotalLoss, IsPlainSum) {
    auto z = Tensor<double>::scalar(0.0), x = Tensor<double>::scalar(1.75);
    EXPECT_EQ(total_loss(z, x).item(), 1.75);
    Rng rng = make_rng(18);
    for (int i = 0; i < 10; ++i) {
        double a = uniform(rng, -5, 5), b = uniform(rng, -5, 5);
        EXPECT_EQ(total_loss(Tensor<double>::scalar(a), Tensor<double>::scalar(b)).item(), a + b);
    }
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
    Rng rng = make_rng(19);
    auto fq = random_tensor({2, 4}, rng);
    auto bank = random_tensor({3, 4}, rng);
    auto logits_w = random_tensor({4, 3}, rng);
    auto grad_of = [&](int which) {
        auto x = Tensor<double>(fq.shape(), fq.values(), true);
        Tape<double> tape;
        Tensor<double> loss;
        {
            Tape<double>::Scope s(tape);
            auto con = info_nce(x, bank, {0, 2}, 0.5);
            auto cls = cross_entropy(matmul(x, logits_w), {1, 2});
            loss = which == 0 ? con : which == 1 ? cls : total_loss(con, cls);
        }
        tape.backward(loss);
        return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    auto a = grad_of(0), b = grad_of(1), t = grad_of(2);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], a[i] + b[i], 1e-14);
}
