// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. `--only 3,7` restricts
// the run; exit status is non-zero when any executed criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpef/dpef.hpp"

using namespace dpef;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

class Clock {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void quiet(const std::string&) {}

Tensor<double> unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> d(rows * dim);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0;
        for (std::size_t j = 0; j < dim; ++j) ss += (d[r * dim + j] = normal(rng)) * d[r * dim + j];
        for (std::size_t j = 0; j < dim; ++j) d[r * dim + j] /= std::sqrt(ss);
    }
    return Tensor<double>({rows, dim}, d);
}

Tensor<double> uniform_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = uniform(rng, lo, hi);
    return Tensor<double>(std::move(shape), std::move(d));
}

TokenSet<double> token_set(Tensor<double> cls, Tensor<double> patches) {
    TokenSet<double> t;
    t.cls = std::move(cls);
    t.patches = std::move(patches);
    for (std::size_t i = 0; i < t.patches.rows(); ++i) t.grid.push_back({i / 4, i % 4});
    return t;
}

// ---------------------------------------------------------------- 1 and 2

struct RefSelection {
    std::size_t proxy = 0, k = 0;
    std::vector<std::size_t> order;
};

/// Proxy by linear scan, order by insertion into a sorted list, split by
/// scanning the differences.
RefSelection reference_selection(const TokenSet<double>& t, std::size_t k_min) {
    const std::size_t n = t.size(), c = t.dim();
    auto dot = [&](const Tensor<double>& a, std::size_t ra, const Tensor<double>& b, std::size_t rb) {
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += a.at(ra, j) * b.at(rb, j);
        return s;
    };
    RefSelection r;
    double best = -INFINITY;
    for (std::size_t i = 0; i < n; ++i)
        if (const double s = dot(t.cls, 0, t.patches, i); s > best) best = s, r.proxy = i;
    std::vector<double> score(n);
    for (std::size_t i = 0; i < n; ++i) score[i] = dot(t.patches, r.proxy, t.patches, i);
    score[r.proxy] = *std::max_element(score.begin(), score.end());

    r.order.push_back(r.proxy);
    for (std::size_t i = 0; i < n; ++i) {
        if (i == r.proxy) continue;
        auto pos = r.order.begin() + 1;
        while (pos != r.order.end() && score[*pos] >= score[i]) ++pos;
        r.order.insert(pos, i);
    }
    std::size_t raw = 1;
    double best_d = -INFINITY;
    for (std::size_t i = 0; i + 1 < n; ++i)
        if (const double d = score[r.order[i]] - score[r.order[i + 1]]; d > best_d) best_d = d, raw = i + 1;
    r.k = std::max(raw, k_min);
    return r;
}

Verdict criterion_1() {
    Clock clock;
    Rng rng = make_rng(20260101);
    std::size_t mismatches = 0, sets = 0;
    for (; sets < 1200; ++sets) {
        const std::size_t n = 8 + uniform_index(rng, 57), c = 2 + uniform_index(rng, 31);
        const std::size_t k_min = 1 + uniform_index(rng, n);
        auto tokens = token_set(unit_rows(1, c, rng), unit_rows(n, c, rng));
        SelectionConfig cfg;
        cfg.k_min = k_min;
        cfg.parts = 1;
        const auto got = select(tokens, cfg);
        const auto ref = reference_selection(tokens, k_min);
        const std::vector<std::size_t> ref_sel(ref.order.begin(), ref.order.begin() + long(ref.k));
        const bool ok = got.proxy_index == ref.proxy && got.order == ref.order && got.k == ref.k &&
                        got.selected == ref_sel && got.k >= k_min &&
                        std::find(got.selected.begin(), got.selected.end(), got.proxy_index) != got.selected.end();
        mismatches += !ok;
    }
    const double t = clock.seconds();
    return {mismatches == 0 && t < 10.0, fmt("%zu random token sets, %zu mismatches, %.2f s (limit 10 s)", sets,
                                             mismatches, t)};
}

Verdict criterion_2() {
    Rng rng = make_rng(20260102);
    std::size_t bad = 0;
    const std::size_t pairs = 100, c = 16;
    for (std::size_t p = 0; p < pairs; ++p) {
        auto u = unit_rows(1, c, rng), w = unit_rows(1, c, rng);
        double uw = 0;
        for (std::size_t j = 0; j < c; ++j) uw += u[j] * w[j];
        std::vector<double> v(c);
        double vv = 0;
        for (std::size_t j = 0; j < c; ++j) vv += (v[j] = w[j] - uw * u[j]) * v[j];
        for (auto& x : v) x /= std::sqrt(vv);
        // exact orthogonality: zero the residual dot by projecting once more
        double uv = 0;
        for (std::size_t j = 0; j < c; ++j) uv += u[j] * v[j];
        for (std::size_t j = 0; j < c; ++j) v[j] -= uv * u[j];

        std::vector<double> rows;
        std::vector<std::size_t> perm(12);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::set<std::size_t> u_slots(perm.begin(), perm.begin() + 5);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < c; ++j) rows.push_back(u_slots.count(i) ? u[j] : v[j]);
        auto tokens = token_set(u, Tensor<double>({12, c}, rows));
        SelectionConfig cfg;
        cfg.k_min = 1;
        cfg.parts = 1;
        const auto r = select(tokens, cfg);
        const std::set<std::size_t> sel(r.selected.begin(), r.selected.end());
        bad += !(r.k == 5 && sel == u_slots);
    }
    return {bad == 0, fmt("%zu orthogonal pairs with 5 u-tokens among 12, %zu wrong splits", pairs, bad)};
}

// ---------------------------------------------------------------- 3

template <typename T>
std::vector<Tensor<T>> param_tensors(const ParamList<T>& list) {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : list) out.push_back(t);
    return out;
}

struct GradTally {
    double worst64 = 0, worst32 = 0;
    std::vector<std::string> failures;
    void add64(const std::string& name, const GradCheckReport& r) {
        worst64 = std::max(worst64, r.max_rel_error);
        if (!r.passed) failures.push_back(name + " (64-bit): " + r.message);
    }
    void add32(const std::string& name, const GradCheckReport& r) {
        worst32 = std::max(worst32, r.max_rel_error);
        if (!r.passed) failures.push_back(name + " (32-bit): " + r.message);
    }
};

GradCheckOptions opts64() {
    GradCheckOptions o;
    o.step = 1e-5;
    o.tolerance = 1e-4;
    return o;
}

GradCheckOptions opts32() {
    GradCheckOptions o;
    o.step = 1e-4;
    o.tolerance = 1e-3;
    o.abs_floor = 1e-3;
    o.five_point = true;
    return o;
}

void check_primitives(GradTally& tally) {
    Rng wr = make_rng(31);
    const auto w = uniform_tensor({4, 6}, wr);
    auto probe = [&](auto x) {
        using T = typename decltype(x)::value_type;
        return w.template cast<T>();
    };
    auto both = [&](const char* name, auto f, std::vector<Tensor<double>> inputs) {
        tally.add64(name, grad_check<double>(f, inputs, opts64()));
        tally.add32(name, grad_check_f32(f, f, inputs, opts32()));
    };
    Rng r = make_rng(32);
    const auto x46 = uniform_tensor({4, 6}, r);
    both("matmul", [](auto& in) { auto y = matmul(in[0], in[1]); return sum(mul(y, y)); },
         {uniform_tensor({3, 4}, r), uniform_tensor({4, 5}, r)});
    both("linear", [](auto& in) { auto y = linear(in[0], in[1], in[2]); return sum(mul(y, y)); },
         {uniform_tensor({3, 4}, r), uniform_tensor({4, 5}, r), uniform_tensor({5}, r)});
    both("matmul_nt", [](auto& in) { auto y = matmul_nt(in[0], in[0]); return sum(mul(y, y)); }, {x46});
    both("transpose", [&](auto& in) { return sum(mul(transpose(transpose(in[0])), probe(in[0]))); }, {x46});
    both("add", [&](auto& in) { return sum(mul(add(in[0], in[1]), probe(in[0]))); }, {x46, uniform_tensor({4, 6}, r)});
    both("mul", [&](auto& in) { return sum(mul(mul(in[0], in[1]), probe(in[0]))); }, {x46, uniform_tensor({4, 6}, r)});
    both("scale", [&](auto& in) { using T = typename std::decay_t<decltype(in[0])>::value_type;
        return sum(mul(scale(in[0], T(1.7)), probe(in[0]))); }, {x46});
    both("gelu", [&](auto& in) { return sum(mul(gelu(in[0]), probe(in[0]))); }, {x46});
    both("softmax", [&](auto& in) { return sum(mul(softmax(in[0]), probe(in[0]))); }, {x46});
    both("layer_norm", [&](auto& in) { return sum(mul(layer_norm(in[0], in[1], in[2]), probe(in[0]))); },
         {x46, uniform_tensor({6}, r, 0.5, 1.5), uniform_tensor({6}, r)});
    both("l2_normalize", [&](auto& in) { return sum(mul(l2_normalize(in[0]), probe(in[0]))); }, {x46});
    both("slice_rows/slice_cols", [](auto& in) { auto a = slice_cols(slice_rows(in[0], 1, 3), 2, 5); return sum(mul(a, a)); },
         {x46});
    both("concat", [](auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        auto c = concat_cols<T>({in[0], concat_rows<T>({slice_rows(in[0], 0, 2), slice_rows(in[0], 2, 4)})});
        return sum(mul(c, c));
    }, {x46});
    both("group_mean_rows", [](auto& in) { auto g = group_mean_rows(in[0], {{0, 3}, {1}, {1, 2, 3}}); return sum(mul(g, g)); },
         {x46});
    both("cross_entropy", [](auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        return cross_entropy(in[0], {1, 0, 5, 2}, std::vector<T>{1.0, 0.3, 1.0, 2.0});
    }, {x46});
    both("batch_norm", [&](auto& in) { return sum(mul(batch_norm_train(in[0], in[1], in[2]), probe(in[0]))); },
         {x46, uniform_tensor({6}, r, 0.5, 1.5), uniform_tensor({6}, r)});
    both("add_row", [&](auto& in) { return sum(mul(add_row(in[0], in[1]), probe(in[0]))); }, {x46, uniform_tensor({6}, r)});
    both("reshape", [&](auto& in) { return sum(mul(reshape(reshape(in[0], {3, 8}), {4, 6}), probe(in[0]))); }, {x46});
    both("add_scalars", [](auto& in) { return add_scalars<typename std::decay_t<decltype(in[0])>::value_type>({sum(mul(in[0], in[0])), sum(in[0])}); },
         {x46});
    const std::vector<double> rmean = {0.1, -0.2, 0.3, 0.0, 0.5, -0.1}, rvar = {1.0, 0.5, 2.0, 1.5, 0.8, 1.2};
    both("batch_norm_eval", [&](auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        const std::vector<T> m(rmean.begin(), rmean.end()), v(rvar.begin(), rvar.end());
        return sum(mul(batch_norm_eval(in[0], in[1], in[2], std::span<const T>(m), std::span<const T>(v)), probe(in[0])));
    }, {x46, uniform_tensor({6}, r, 0.5, 1.5), uniform_tensor({6}, r)});
    const auto nce_bank = uniform_tensor({5, 6}, r);
    both("info_nce", [&](auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        return info_nce(in[0], nce_bank.template cast<T>(), {1, 3}, 0.5, std::vector<T>{1.0, 0.3});
    }, {uniform_tensor({2, 6}, r)});
}

/// Copies double parameters into their float twins (optionally perturbing
/// them first) and rounds the doubles back so both evaluate the same point.
void sync_params(ParamList<double>& pd, ParamList<float>& pf, Rng& rng, double jitter,
                 const std::function<bool(const std::string&)>& perturb) {
    for (std::size_t i = 0; i < pd.size(); ++i) {
        auto dd = pd[i].second.mutable_data();
        auto ff = pf[i].second.mutable_data();
        const bool move = perturb(pd[i].first);
        for (std::size_t j = 0; j < dd.size(); ++j) {
            if (move) dd[j] += uniform(rng, -jitter, jitter);
            ff[j] = float(dd[j]);
            dd[j] = double(ff[j]);
        }
    }
}

/// 32-bit reverse-mode gradients against 64-bit central differences of the
/// same function at the same parameter values.
template <typename L32, typename L64>
GradCheckReport compare_f32(L32&& loss32, ParamList<float>& pf, L64&& loss64, ParamList<double>& pd,
                            std::size_t coords, std::uint64_t seed) {
    const auto opt = opts32();
    for (auto& [name, t] : pf) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    Tape<float> tape;
    Tensor<float> lf;
    {
        Tape<float>::Scope scope(tape);
        lf = loss32();
    }
    tape.backward(lf);
    double gmax = 0;
    for (auto& [name, t] : pf)
        for (auto v : t.grad()) gmax = std::max(gmax, double(std::abs(v)));
    const double floor = std::max(opt.abs_floor, 1e-2 * gmax);
    auto eval64 = [&] {
        Tape<double>::Pause no_record;
        return loss64().item();
    };
    GradCheckReport rep;
    Rng rng = make_rng(seed);
    for (std::size_t i = 0; i < pd.size(); ++i) {
        auto data64 = pd[i].second.mutable_data();
        const auto g = pf[i].second.grad();
        for (auto j : detail::pick_coords(data64.size(), coords, rng)) {
            const double num = detail::finite_difference(
                data64[j], opt.step, opt.five_point, [&](double v) { data64[j] = v; }, eval64);
            const double ana = g.empty() ? 0.0 : double(g[j]);
            const double err = detail::rel_error(ana, num, floor);
            ++rep.coords_checked;
            if (err >= rep.max_rel_error) {
                rep.max_rel_error = err;
                rep.message = pd[i].first + fmt("[%zu]: analytic %.6g numeric %.6g", j, ana, num);
            }
        }
    }
    rep.passed = rep.max_rel_error <= opt.tolerance;
    if (!rep.passed) rep.message += fmt(" (floor %.2g)", floor);
    return rep;
}

void check_fbm(GradTally& tally) {
    FbmConfig cfg;
    cfg.dim = 16;
    cfg.sub_size = 4;
    cfg.heads = 2;
    Rng rd = make_rng(33), rf = make_rng(33);
    auto wd = FbmWeights<double>::init(cfg, rd);
    auto wf = FbmWeights<float>::init(cfg, rf);
    ParamList<double> pd;
    ParamList<float> pf;
    Rng rng = make_rng(34);
    const auto fg = uniform_tensor({1, 16}, rng), fp = uniform_tensor({1, 16}, rng), probe = uniform_tensor({1, 16}, rng);
    wd.collect_parameters("", pd);
    wf.collect_parameters("", pf);
    pd.emplace_back("f_g", fg);
    pd.emplace_back("f_part", fp);
    pf.emplace_back("f_g", fg.cast<float>());
    pf.emplace_back("f_part", fp.cast<float>());
    // larger weights than the init so every nonlinearity is exercised
    sync_params(pd, pf, rng, 0.5, [](const std::string&) { return true; });

    auto l64 = [&] { return sum(mul(blend(pd[pd.size() - 2].second, pd.back().second, wd, cfg).feature, probe)); };
    auto l32 = [&] {
        return sum(mul(blend(pf[pf.size() - 2].second, pf.back().second, wf, cfg).feature, probe.cast<float>()));
    };
    tally.add64("fbm block", grad_check<double>([&](auto&) { return l64(); }, param_tensors(pd), opts64()));
    tally.add32("fbm block", compare_f32(l32, pf, l64, pd, 0, 35));
}

/// Full graph: encoder, DPSM pooling (selection held at its value), FBM,
/// contrastive and all classification losses, toy configuration.
void check_full_graph(GradTally& tally) {
    RunConfig cfg = RunConfig::toy();
    const std::size_t classes = 4;
    const auto data = synth_dataset(5, [] {
        SynthOptions o;
        o.num_ids = 4;
        return o;
    }());
    PreparedBatch batch;
    for (std::size_t i : {0u, 1u, 4u, 5u}) {
        batch.images.push_back(data.train[i].image);
        batch.labels.push_back(data.train[i].identity);
        batch.augmented.push_back(i == 1);
    }
    Rng brng = make_rng(34);
    std::vector<std::vector<float>> rows;
    std::vector<std::size_t> labels;
    const std::size_t dim = cfg.selection.parts * cfg.encoder.dim;
    for (std::size_t id = 0; id < classes; ++id) {
        auto r = unit_rows(1, dim, brng);
        rows.emplace_back(r.data().begin(), r.data().end());
        labels.push_back(id);
    }
    const auto bank = MemoryBank::init(rows, labels, classes, cfg.objective.bank_momentum);

    Model<double> md(cfg, classes);
    Model<float> mf(cfg, classes);
    auto pd = md.parameters();
    auto pf = mf.parameters();
    // move heads away from their near-zero init
    Rng prng = make_rng(35);
    sync_params(pd, pf, prng, 0.1, [](const std::string& name) { return name.starts_with("head"); });
    std::vector<std::vector<std::size_t>> forced;
    {
        Tape<double>::Pause no_record;
        for (const auto& im : batch.images) forced.push_back(md.forward(im).selection.selected);
    }
    auto l64 = [&] { return batch_loss(md, batch, bank, nullptr, true, &forced).total; };
    auto l32 = [&] { return batch_loss(mf, batch, bank, nullptr, true, &forced).total; };
    GradCheckOptions o = opts64();
    o.step = 1e-4;
    o.five_point = true;
    o.max_coords_per_input = 3;
    o.seed = 36;
    tally.add64("encoder+fbm+losses", grad_check<double>([&](auto&) { return l64(); }, param_tensors(pd), o));
    tally.add32("encoder+fbm+losses", compare_f32(l32, pf, l64, pd, 3, 37));
}

Verdict criterion_3() {
    Clock clock;
    GradTally tally;
    check_primitives(tally);
    check_fbm(tally);
    check_full_graph(tally);
    const double t = clock.seconds();
    std::string detail = fmt("primitives, fbm block, full graph; worst rel err %.2e (64-bit, tol 1e-4), %.2e (32-bit, "
                             "tol 1e-3); %.1f s (limit 120 s)",
                             tally.worst64, tally.worst32, t);
    for (const auto& f : tally.failures) detail += "\n      " + f;
    return {tally.failures.empty() && t < 120.0, detail};
}

// ---------------------------------------------------------------- 4

Verdict criterion_4() {
    Rng rng = make_rng(40);
    double worst = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t m = 1 + uniform_index(rng, 64), d = 1 + uniform_index(rng, 32);
        const double tau = uniform(rng, 0.03, 2.0);
        auto fq = uniform_tensor({1, d}, rng), bank = uniform_tensor({m, d}, rng);
        const std::size_t j = uniform_index(rng, m);
        long double mx = -INFINITY;
        std::vector<long double> z(m);
        for (std::size_t l = 0; l < m; ++l) {
            long double s = 0;
            for (std::size_t k = 0; k < d; ++k) s += (long double)fq[k] * bank.at(l, k);
            z[l] = s / tau;
            mx = std::max(mx, z[l]);
        }
        long double den = 0;
        for (auto v : z) den += std::exp(v - mx);
        const double ref = double(-(z[j] - mx - std::log(den)));
        worst = std::max(worst, std::abs(info_nce(fq, bank, {j}, tau).item() - ref));
    }
    const bool brute_ok = worst <= 1e-6;

    bool single_ok = true;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + uniform_index(rng, 16);
        single_ok &= info_nce(uniform_tensor({1, d}, rng), uniform_tensor({1, d}, rng), {0}, 0.05).item() == 0.0;
    }

    // weighting: loss and gradient scale by 0.3
    double worst_w = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto bank = uniform_tensor({10, 8}, rng);
        auto base = uniform_tensor({1, 8}, rng);
        auto run = [&](double w, std::vector<double>& g) {
            Tensor<double> fq(base.shape(), base.values(), true);
            Tape<double> tape;
            Tensor<double> loss;
            {
                Tape<double>::Scope s(tape);
                loss = info_nce(fq, bank, {3}, 0.05, {w});
            }
            tape.backward(loss);
            g.assign(fq.grad().begin(), fq.grad().end());
            return loss.item();
        };
        std::vector<double> g1, g3;
        const double l1 = run(1.0, g1), l3 = run(0.3, g3);
        worst_w = std::max(worst_w, std::abs(l3 - 0.3 * l1) / std::abs(l1));
        double gmax = 0, gdiff = 0;
        for (std::size_t i = 0; i < g1.size(); ++i) {
            gmax = std::max(gmax, std::abs(g1[i]));
            gdiff = std::max(gdiff, std::abs(g3[i] - 0.3 * g1[i]));
        }
        worst_w = std::max(worst_w, gdiff / gmax);
    }
    const bool weight_ok = worst_w <= 4 * std::numeric_limits<double>::epsilon();
    const bool weight_default = ObjectiveConfig{}.roa_weight == 0.3;

    // bank update against the two-step closed form
    double worst_bank = 0;
    bool fixed_point = true;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t ids = 2 + uniform_index(rng, 6), d = 1 + uniform_index(rng, 16);
        const double mu = uniform(rng, 0, 1);
        std::vector<std::vector<float>> feats;
        std::vector<std::size_t> labels;
        for (std::size_t id = 0; id < ids; ++id) {
            std::vector<float> f(d);
            for (auto& v : f) v = float(uniform(rng, -1, 1));
            feats.push_back(f);
            labels.push_back(id);
        }
        auto bank = MemoryBank::init(feats, labels, ids, mu);
        std::vector<float> a(d), b(d);
        for (auto& v : a) v = float(uniform(rng, -1, 1));
        for (auto& v : b) v = float(uniform(rng, -1, 1));
        const std::size_t j = uniform_index(rng, ids);
        bank.update(j, a);
        bank.update(j, b);
        for (std::size_t k = 0; k < d; ++k) {
            const double closed = mu * mu * feats[j][k] + mu * (1 - mu) * a[k] + (1 - mu) * b[k];
            worst_bank = std::max(worst_bank, std::abs(double(bank.row(j)[k]) - closed));
        }
        auto still = MemoryBank::init(feats, labels, ids, 1.0);
        still.update(j, a);
        for (std::size_t k = 0; k < d; ++k) fixed_point &= still.row(j)[k] == feats[j][k];
    }
    const bool mu_default = ObjectiveConfig{}.bank_momentum == 0.2;

    const bool pass = brute_ok && single_ok && weight_ok && weight_default && worst_bank <= 1e-6 && fixed_point && mu_default;
    return {pass, fmt("info_nce max |err| %.2e (tol 1e-6); M=1 zero: %s; weight 0.3 rel err %.1e (rounding only); bank closed form "
                      "max |err| %.2e (tol 1e-6); mu=1 fixed point: %s; defaults mu=0.2, weight=0.3: %s",
                      worst, single_ok ? "yes" : "no", worst_w, worst_bank, fixed_point ? "yes" : "no",
                      (mu_default && weight_default) ? "yes" : "no")};
}

// ---------------------------------------------------------------- 5

Verdict criterion_5() {
    const std::size_t H = 256, W = 128;
    auto bank = synth_masks(50, 200);
    Rng irng = make_rng(51);
    Image base(3, H, W);
    for (auto& v : base.data) v = float(uniform(irng, 0, 1));
    const RoaParams params;
    std::size_t violations = 0, tall_draws = 0, draws = 1000;
    std::string first;
    auto fail = [&](const std::string& why, std::size_t draw) {
        if (violations++ == 0) first = fmt("draw %zu: ", draw) + why;
    };
    for (std::size_t draw = 0; draw < draws; ++draw) {
        Rng rng = make_rng(52, {draw});
        const auto r = roa(base, bank, params, rng, quiet);
        if (!r.plan.valid) {
            fail("no valid plan", draw);
            continue;
        }
        const Box b = r.plan.box;
        const double area = double(b.w * b.h);
        // truncation to whole pixels removes less than one row or column
        const double slack = r.plan.tall ? double(H) : double(W);
        if (area < 0.5 * H * W - slack || area > 0.75 * H * W) fail("area out of range", draw);
        const bool corner = (b.x == 0 && b.y == 0) || (b.x == 0 && b.y + b.h == H) || (b.x + b.w == W && b.y == 0);
        if (!corner) fail("box not at an allowed corner", draw);
        if (r.plan.tall) {
            ++tall_draws;
            if (b.h != H) fail("tall branch without full height", draw);
        } else if (b.w != W) {
            fail("wide branch without full width", draw);
        }
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                bool changed = false;
                for (std::size_t c = 0; c < 3; ++c) changed |= base.at(c, y, x) != r.image.at(c, y, x);
                const bool inside = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
                if ((changed || r.occlusion.at(y, x)) && !inside) {
                    fail("modified pixel outside the box", draw);
                    y = H;
                    break;
                }
            }
        Rng again = make_rng(52, {draw});
        if (roa(base, bank, params, again, quiet).image != r.image) fail("not deterministic", draw);
    }
    std::string detail = fmt("%zu draws on %zux%zu (%zu tall-branch), %zu violations", draws, H, W, tall_draws, violations);
    if (!first.empty()) detail += "; first: " + first;
    return {violations == 0 && tall_draws > 0, detail};
}

// ---------------------------------------------------------------- 6

struct RefMetrics {
    std::vector<double> cmc;
    double map = 0;
};

RefMetrics reference_metrics(const std::vector<double>& d, std::size_t nq, std::size_t ng,
                             const std::vector<std::size_t>& qi, const std::vector<std::size_t>& qc,
                             const std::vector<std::size_t>& gi, const std::vector<std::size_t>& gc, bool& any) {
    RefMetrics r;
    std::vector<double> hits(10, 0);
    double ap_sum = 0;
    std::size_t evaluated = 0;
    for (std::size_t q = 0; q < nq; ++q) {
        std::vector<std::size_t> valid;
        for (std::size_t g = 0; g < ng; ++g)
            if (!(gi[g] == qi[q] && gc[g] == qc[q])) valid.push_back(g);
        // rank by counting strictly closer items plus earlier ties
        std::vector<std::size_t> pos_ranks;
        for (auto g : valid) {
            if (gi[g] != qi[q]) continue;
            std::size_t rank = 1;
            for (auto h : valid)
                if (d[q * ng + h] < d[q * ng + g] || (d[q * ng + h] == d[q * ng + g] && h < g)) ++rank;
            pos_ranks.push_back(rank);
        }
        if (pos_ranks.empty()) continue;
        ++evaluated;
        std::sort(pos_ranks.begin(), pos_ranks.end());
        double ap = 0;
        for (std::size_t i = 0; i < pos_ranks.size(); ++i) ap += double(i + 1) / double(pos_ranks[i]);
        ap_sum += ap / double(pos_ranks.size());
        for (std::size_t k = pos_ranks.front(); k <= 10; ++k) hits[k - 1] += 1;
    }
    any = evaluated > 0;
    if (!any) return r;
    for (auto h : hits) r.cmc.push_back(h / double(evaluated));
    r.map = ap_sum / double(evaluated);
    return r;
}

Verdict criterion_6() {
    Rng rng = make_rng(60);
    std::size_t mismatches = 0, matrices = 0, with_exclusions = 0;
    while (matrices < 200) {
        const std::size_t nq = 1 + uniform_index(rng, 20), ng = 1 + uniform_index(rng, 50);
        const std::size_t ids = 1 + uniform_index(rng, 6), cams = 1 + uniform_index(rng, 3);
        std::vector<std::size_t> qi(nq), qc(nq), gi(ng), gc(ng);
        for (auto& v : qi) v = uniform_index(rng, ids);
        for (auto& v : qc) v = uniform_index(rng, cams);
        for (auto& v : gi) v = uniform_index(rng, ids);
        for (auto& v : gc) v = uniform_index(rng, cams);
        std::vector<double> d(nq * ng);
        for (auto& v : d) v = double(uniform_index(rng, 10)) / 10.0;
        bool any = false;
        const auto ref = reference_metrics(d, nq, ng, qi, qc, gi, gc, any);
        if (!any) continue;
        ++matrices;
        bool excl = false;
        for (std::size_t q = 0; q < nq; ++q)
            for (std::size_t g = 0; g < ng; ++g) excl |= qi[q] == gi[g] && qc[q] == gc[g];
        with_exclusions += excl;
        const auto m = retrieval_metrics(d, nq, ng, qi, qc, gi, gc, 10);
        mismatches += !(m.map == ref.map && m.cmc == ref.cmc);
    }
    const auto ap1 = retrieval_metrics({0.1, 0.5, 0.9}, 1, 3, {0}, {0}, {0, 1, 2}, {1, 1, 1});
    const auto ap2 = retrieval_metrics({0.1, 0.2, 0.3, 0.4}, 1, 4, {0}, {0}, {0, 1, 0, 2}, {1, 1, 2, 1});
    const bool examples = ap1.map == 1.0 && ap1.rank(1) == 1.0 && ap2.map == (1.0 + 2.0 / 3.0) / 2.0 &&
                          std::abs(ap2.map - 0.8333) < 5e-5;
    return {mismatches == 0 && examples,
            fmt("%zu random matrices (%zu with same-id/same-camera exclusions), %zu mismatches; AP examples %.4f and "
                "%.4f",
                matrices, with_exclusions, mismatches, ap1.map, ap2.map)};
}

// ---------------------------------------------------------------- 7, 8, 9

struct SeedRuns {
    std::vector<RunOutcome> runs;
    double mean(const std::function<double(const RunOutcome&)>& f) const {
        double s = 0;
        for (const auto& r : runs) s += f(r);
        return s / double(runs.size());
    }
    double rank1() const { return mean([](const RunOutcome& r) { return r.metrics.rank(1); }); }
    double map() const { return mean([](const RunOutcome& r) { return r.metrics.map; }); }
    double max_seconds() const {
        double m = 0;
        for (const auto& r : runs) m = std::max(m, r.seconds);
        return m;
    }
};

constexpr std::size_t kSeeds = 3;

class ToyRuns {
public:
    explicit ToyRuns(RunConfig base) : base_(std::move(base)) {}

    const SeedRuns& get(const std::string& name, const std::function<RunConfig(RunConfig)>& variant) {
        auto it = cache_.find(name);
        if (it != cache_.end()) return it->second;
        SeedRuns s;
        for (std::size_t seed = 0; seed < kSeeds; ++seed) {
            RunConfig cfg = variant(base_);
            cfg.seed = seed;
            s.runs.push_back(run_experiment(cfg, {}, quiet));
            const auto& r = s.runs.back();
            std::fprintf(stderr, "  [%s seed %zu] Rank-1 %.4f mAP %.4f", name.c_str(), seed, r.metrics.rank(1),
                         r.metrics.map);
            if (r.selection) std::fprintf(stderr, " precision %.3f random %.3f", r.selection->precision, r.selection->random_precision);
            std::fprintf(stderr, " (%.0f s)\n", r.seconds);
        }
        return cache_.emplace(name, std::move(s)).first->second;
    }

    const SeedRuns& full() { return get("full", [](RunConfig c) { return c; }); }

private:
    RunConfig base_;
    std::map<std::string, SeedRuns> cache_;
};

Verdict criterion_7(ToyRuns& runs) {
    const auto& full = runs.full();
    const double r1 = full.rank1(), map = full.map(), worst = full.max_seconds();
    return {r1 >= 0.90 && map >= 0.75 && worst <= 1200.0,
            fmt("mean over %zu seeds: Rank-1 %.4f (need 0.90), mAP %.4f (need 0.75); slowest run %.0f s (limit 1200 s)",
                kSeeds, r1, map, worst)};
}

Verdict criterion_8(ToyRuns& runs) {
    const double full = runs.full().rank1();
    const double base_roa = runs.get("baseline+roa", [](RunConfig c) { return c.as_baseline(); }).rank1();
    const double base_none = runs.get("baseline-no-aug", [](RunConfig c) {
        c = c.as_baseline();
        c.train.augmentation = Augmentation::none;
        return c;
    }).rank1();
    const double full_re = runs.get("full+re", [](RunConfig c) {
        c.train.augmentation = Augmentation::random_erase;
        return c;
    }).rank1();
    const bool order = full >= base_roa && base_roa >= base_none;
    const bool roa_vs_re = full >= full_re;
    const bool margin = full - base_none >= 0.03;
    return {order && roa_vs_re && margin,
            fmt("mean Rank-1: full %.4f, baseline+ROA %.4f, baseline no-aug %.4f, full with RE %.4f; ordering %s, ROA>=RE "
                "%s, margin %+.4f (need +0.03)",
                full, base_roa, base_none, full_re, order ? "ok" : "violated", roa_vs_re ? "ok" : "violated",
                full - base_none)};
}

Verdict criterion_9(ToyRuns& runs) {
    const auto& full = runs.full();
    const double prec = full.mean([](const RunOutcome& r) { return r.selection->precision; });
    const double rnd = full.mean([](const RunOutcome& r) { return r.selection->random_precision; });
    const double k = full.mean([](const RunOutcome& r) { return r.selection->mean_k; });
    return {prec - rnd >= 0.10, fmt("selection precision %.4f vs equal-k random %.4f: %+.1f points (need +10); mean k "
                                    "%.1f",
                                    prec, rnd, 100 * (prec - rnd), k)};
}

// ---------------------------------------------------------------- 10

Verdict criterion_10() {
    RunConfig cfg = RunConfig::toy();
    cfg.seed = 3;
    cfg.train.max_steps = 12;
    const auto data = load_dataset(cfg);
    const auto dir = fs::temp_directory_path() / "dpef_acceptance_10";
    fs::create_directories(dir);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    auto logged_run = [&](const fs::path& csv) {
        Trainer t(cfg, data, make_mask_bank(cfg), quiet);
        LossLog log(csv);
        t.run([&](const StepReport& r) { log.write(r); });
    };
    logged_run(dir / "a.csv");
    logged_run(dir / "b.csv");
    const bool csv_same = slurp(dir / "a.csv") == slurp(dir / "b.csv");

    Trainer a(cfg, data, make_mask_bank(cfg), quiet);
    for (int i = 0; i < 6; ++i) a.step();
    a.save(dir / "mid.ckpt");
    const auto next_a = a.step().loss;
    Trainer b(cfg, data, make_mask_bank(cfg), quiet);
    b.load(dir / "mid.ckpt");
    const auto next_b = b.step().loss;
    const bool resume_same = next_a.l_total == next_b.l_total && next_a.l_con == next_b.l_con &&
                             next_a.l_cls == next_b.l_cls;
    b.save(dir / "again.ckpt");
    a.save(dir / "ref.ckpt");
    const bool state_same = slurp(dir / "again.ckpt") == slurp(dir / "ref.ckpt");
    fs::remove_all(dir);
    return {csv_same && resume_same && state_same,
            fmt("loss CSVs of two %zu-step runs identical: %s; resumed next-step loss %.9g vs %.9g (%s); post-step "
                "state bytes identical: %s",
                cfg.train.max_steps, csv_same ? "yes" : "no", next_b.l_total, next_a.l_total,
                resume_same ? "bit-equal" : "differs", state_same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);
    std::set<int> want(only.begin(), only.end());
    if (want.empty())
        for (int i = 1; i <= 10; ++i) want.insert(i);

    ToyRuns runs(RunConfig::toy());
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"DPSM oracle equivalence", criterion_1},
        {"two-cluster exactness", criterion_2},
        {"gradient suite", criterion_3},
        {"loss oracles", criterion_4},
        {"ROA contract", criterion_5},
        {"retrieval-metric oracle", criterion_6},
        {"toy end-to-end retrieval", [&] { return criterion_7(runs); }},
        {"directional ablations", [&] { return criterion_8(runs); }},
        {"selection quality", [&] { return criterion_9(runs); }},
        {"reproducibility and persistence", criterion_10},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!want.count(int(i + 1))) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += !v.pass;
        std::printf("%s  %2zu  %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
