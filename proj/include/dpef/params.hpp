// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dpef/numerics/tensor.hpp"
#include "dpef/rng.hpp"

namespace dpef {

/// Named handles to trainable tensors, in a fixed registration order.
template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
Tensor<T> init_trunc_normal(Shape shape, Rng& rng, double std = 0.02) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = T(truncated_normal(rng, std));
    return Tensor<T>(std::move(shape), std::move(data), true);
}

template <typename T>
Tensor<T> init_const(Shape shape, double value) {
    return Tensor<T>::full(std::move(shape), T(value), true);
}

/// Copies values between two identically laid out parameter lists, converting
/// the scalar type if needed.
template <typename Src, typename Dst>
void copy_parameter_values(const ParamList<Src>& src, ParamList<Dst>& dst) {
    if (src.size() != dst.size()) throw DimensionError("parameter lists differ in length");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape()) {
            throw DimensionError("parameter layout mismatch at " + src[i].first);
        }
        auto in = src[i].second.data();
        auto out = dst[i].second.mutable_data();
        for (std::size_t j = 0; j < in.size(); ++j) out[j] = Dst(in[j]);
    }
}

}  // namespace dpef
