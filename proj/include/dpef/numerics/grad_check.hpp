// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dpef/numerics/tensor.hpp"
#include "dpef/rng.hpp"

namespace dpef {

struct GradCheckOptions {
    double step = 1e-3;
    double tolerance = 1e-4;
    /// Relative error is |a - n| / max(|a|, |n|, abs_floor).
    double abs_floor = 1e-6;
    /// 0 checks every coordinate; otherwise a seeded random subset per input.
    std::size_t max_coords_per_input = 0;
    std::uint64_t seed = 0;
    /// Fourth-order stencil (f(x-2h), f(x-h), f(x+h), f(x+2h)) instead of the
    /// plain central difference.
    bool five_point = false;
};

struct GradCheckReport {
    bool passed = false;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    /// Op whose local backward rule disagrees with finite differences, or the
    /// op that produced a non-finite value. Empty when not localized.
    std::string failing_op;
    std::string message;
};

namespace detail {

inline std::vector<std::size_t> pick_coords(std::size_t n, std::size_t limit, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (limit == 0 || limit >= n) return idx;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline double rel_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Derivative of `eval` along one coordinate; `set(v)` writes the coordinate.
template <typename Set, typename Eval>
double finite_difference(double x, double h, bool five_point, Set&& set, Eval&& eval) {
    auto at = [&](double v) {
        set(v);
        return eval();
    };
    double d;
    if (five_point) {
        d = (-at(x + 2 * h) + 8 * at(x + h) - 8 * at(x - h) + at(x - 2 * h)) / (12 * h);
    } else {
        d = (at(x + h) - at(x - h)) / (2 * h);
    }
    set(x);
    return d;
}

/// Replays the tape node by node, checking each backward rule against central
/// differences of that node alone. Returns the first op that disagrees.
template <typename T>
std::string localize_bad_backward(Tape<T>& tape, const GradCheckOptions& opt) {
    Rng rng = make_rng(opt.seed, {0x10ca1});
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& node : tape.nodes()) {
        const std::size_t out_n = node.output->data.size();
        std::vector<T> cot(out_n);
        for (auto& c : cot) c = T(normal(rng));

        std::vector<std::vector<T>> saved;
        for (auto& in : node.inputs) {
            saved.push_back(in->grad);
            in->grad.clear();
        }
        node.backward(cot);
        std::vector<std::vector<T>> analytic;
        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            analytic.push_back(node.inputs[i]->grad);
            node.inputs[i]->grad = saved[i];
        }

        for (std::size_t i = 0; i < node.inputs.size(); ++i) {
            auto& in = node.inputs[i];
            if (!in->requires_grad) continue;
            auto coords = pick_coords(in->data.size(), 16, rng);
            for (auto j : coords) {
                const T orig = in->data[j];
                const T h = T(opt.step);
                in->data[j] = orig + h;
                auto up = node.recompute();
                in->data[j] = orig - h;
                auto down = node.recompute();
                in->data[j] = orig;
                double num = 0.0;
                for (std::size_t o = 0; o < out_n; ++o) num += double(cot[o]) * (double(up[o]) - double(down[o]));
                num /= 2.0 * opt.step;
                const double ana = analytic[i].empty() ? 0.0 : double(analytic[i][j]);
                if (rel_error(ana, num, opt.abs_floor) > opt.tolerance) return node.op;
            }
        }
    }
    return {};
}

}  // namespace detail

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences, coordinate by coordinate.
///
/// `f` receives the input tensors and must return a one-element tensor built
/// from ops in this library. On failure the offending op is localized.
template <typename T, typename F>
GradCheckReport grad_check(F&& f, std::vector<Tensor<T>> inputs, const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }
    Tape<T> tape;
    std::vector<std::vector<T>> analytic;
    try {
        Tensor<T> loss;
        {
            typename Tape<T>::Scope scope(tape);
            loss = f(inputs);
        }
        tape.backward(loss);
        for (auto& in : inputs) {
            auto g = in.grad();
            analytic.emplace_back(g.begin(), g.end());
            if (analytic.back().empty()) analytic.back().assign(in.numel(), T(0));
        }
    } catch (const NonFiniteError& e) {
        report.failing_op = e.op();
        report.message = e.what();
        return report;
    }

    auto eval = [&]() -> double {
        typename Tape<T>::Pause pause;
        return double(f(inputs).item());
    };

    Rng rng = make_rng(opt.seed);
    try {
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            auto data = inputs[i].mutable_data();
            for (auto j : detail::pick_coords(data.size(), opt.max_coords_per_input, rng)) {
                const T orig = data[j];
                const double num = detail::finite_difference(
                    double(orig), opt.step, opt.five_point, [&](double v) { data[j] = T(v); }, eval);
                data[j] = orig;
                const double ana = double(analytic[i][j]);
                const double err = detail::rel_error(ana, num, opt.abs_floor);
                ++report.coords_checked;
                if (err >= report.max_rel_error) {
                    report.max_rel_error = err;
                    report.worst_input = i;
                    report.worst_index = j;
                    report.analytic_at_worst = ana;
                    report.numeric_at_worst = num;
                }
            }
        }
    } catch (const NonFiniteError& e) {
        report.failing_op = e.op();
        report.message = e.what();
        return report;
    }

    report.passed = report.max_rel_error <= opt.tolerance;
    if (!report.passed) {
        report.failing_op = detail::localize_bad_backward(tape, opt);
        std::ostringstream os;
        os << "max relative error " << report.max_rel_error << " at input " << report.worst_input << "["
           << report.worst_index << "]: analytic " << report.analytic_at_worst << " vs numeric "
           << report.numeric_at_worst;
        if (!report.failing_op.empty()) os << " (backward of '" << report.failing_op << "' disagrees)";
        report.message = os.str();
    }
    return report;
}

/// Checks a 32-bit backward pass against central differences of the same graph
/// evaluated in 64-bit. `f32` and `f64` must build the same function.
template <typename F32, typename F64>
GradCheckReport grad_check_f32(F32&& f32, F64&& f64, const std::vector<Tensor<double>>& inputs,
                               const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    std::vector<Tensor<float>> lo;
    for (const auto& in : inputs) lo.push_back(in.template cast<float>());
    for (auto& in : lo) in.set_requires_grad(true);
    Tape<float> tape;
    Tensor<float> loss;
    try {
        {
            Tape<float>::Scope scope(tape);
            loss = f32(lo);
        }
        tape.backward(loss);
    } catch (const NonFiniteError& e) {
        report.failing_op = e.op();
        report.message = e.what();
        return report;
    }

    std::vector<Tensor<double>> hi;
    for (const auto& in : inputs) hi.push_back(in.detach());
    Rng rng = make_rng(opt.seed);
    for (std::size_t i = 0; i < hi.size(); ++i) {
        auto data = hi[i].mutable_data();
        auto g = lo[i].grad();
        for (auto j : detail::pick_coords(data.size(), opt.max_coords_per_input, rng)) {
            const double num = detail::finite_difference(
                data[j], opt.step, opt.five_point, [&](double v) { data[j] = v; }, [&] { return f64(hi).item(); });
            const double ana = g.empty() ? 0.0 : double(g[j]);
            const double err = detail::rel_error(ana, num, opt.abs_floor);
            ++report.coords_checked;
            if (err >= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_index = j;
                report.analytic_at_worst = ana;
                report.numeric_at_worst = num;
            }
        }
    }
    report.passed = report.max_rel_error <= opt.tolerance;
    if (!report.passed) {
        std::ostringstream os;
        os << "max relative error " << report.max_rel_error << " at input " << report.worst_input << "["
           << report.worst_index << "]";
        report.message = os.str();
    }
    return report;
}

}  // namespace dpef
