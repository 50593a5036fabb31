// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dpef/numerics/tensor.hpp"

namespace dpef {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::int64_t step = 0;
};

/// One Adam update with bias-corrected moments and decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
/// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr, double weight_decay,
               const AdamHyper& hyper = {}) {
    if (state.m.empty() && state.v.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), T(0));
            state.v.emplace_back(p.numel(), T(0));
        }
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                             " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
            throw DimensionError("adam_step: state/parameter shape mismatch at tensor " + std::to_string(i));
        }
    }
    ++state.step;
    const T b1 = T(hyper.beta1), b2 = T(hyper.beta2);
    const T c1 = T(1) - T(std::pow(hyper.beta1, double(state.step)));
    const T c2 = T(1) - T(std::pow(hyper.beta2, double(state.step)));
    const T lr_t = T(lr), wd = T(weight_decay), eps = T(hyper.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto data = params[i].mutable_data();
        auto grad = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const T g = grad.empty() ? T(0) : grad[j];
            m[j] = b1 * m[j] + (T(1) - b1) * g;
            v[j] = b2 * v[j] + (T(1) - b2) * g * g;
            const T mhat = m[j] / c1;
            const T vhat = v[j] / c2;
            data[j] -= lr_t * (mhat / (std::sqrt(vhat) + eps) + wd * data[j]);
        }
    }
}

}  // namespace dpef
