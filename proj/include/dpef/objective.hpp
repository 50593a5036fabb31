// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dpef/errors.hpp"
#include "dpef/numerics/ops.hpp"
#include "dpef/params.hpp"

namespace dpef {

/// Per-identity centroid dictionary with exponential-moving-average updates.
/// Entries are buffers: nothing here ever requires a gradient.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(std::size_t identities, std::size_t dim, double momentum)
        : m_(identities), d_(dim), momentum_(momentum), data_(identities * dim, 0.f) {
        if (momentum < 0 || momentum > 1) throw ConfigError("memory bank: momentum outside [0, 1]");
    }

    /// d_j = mean of identity j's features. Every identity must appear.
    static MemoryBank init(const std::vector<std::vector<float>>& features, const std::vector<std::size_t>& labels,
                           std::size_t identities, double momentum) {
        if (features.size() != labels.size()) throw DimensionError("memory bank init: feature/label count mismatch");
        if (features.empty()) throw DataError("memory bank init: no features");
        const std::size_t dim = features.front().size();
        MemoryBank bank(identities, dim, momentum);
        std::vector<double> acc(identities * dim, 0.0);
        std::vector<std::size_t> count(identities, 0);
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (labels[i] >= identities) throw IndexError("memory bank init: label out of range");
            if (features[i].size() != dim) throw DimensionError("memory bank init: ragged features");
            for (std::size_t j = 0; j < dim; ++j) acc[labels[i] * dim + j] += features[i][j];
            ++count[labels[i]];
        }
        for (std::size_t id = 0; id < identities; ++id) {
            if (count[id] == 0) throw DataError("memory bank init: identity " + std::to_string(id) + " has no samples");
            for (std::size_t j = 0; j < dim; ++j) bank.data_[id * dim + j] = float(acc[id * dim + j] / double(count[id]));
        }
        bank.initialized_ = true;
        return bank;
    }

    /// d_j <- mu * d_j + (1 - mu) * f. Callers pass clean (non-occluded) samples only.
    void update(std::size_t j, std::span<const float> f) {
        if (j >= m_) throw IndexError("memory bank: identity " + std::to_string(j) + " out of range");
        if (f.size() != d_) throw DimensionError("memory bank: feature dim mismatch");
        const float mu = float(momentum_);
        for (std::size_t k = 0; k < d_; ++k) data_[j * d_ + k] = mu * data_[j * d_ + k] + (1.f - mu) * f[k];
    }

    std::size_t size() const { return m_; }
    std::size_t dim() const { return d_; }
    double momentum() const { return momentum_; }
    bool initialized() const { return initialized_; }
    std::span<const float> row(std::size_t j) const { return {data_.data() + j * d_, d_}; }
    std::span<const float> data() const { return data_; }
    std::span<float> mutable_data() { return data_; }
    void mark_initialized() { initialized_ = true; }

    template <typename T>
    Tensor<T> as_tensor() const {
        return Tensor<T>({m_, d_}, std::vector<T>(data_.begin(), data_.end()));
    }

private:
    std::size_t m_ = 0, d_ = 0;
    double momentum_ = 0.2;
    std::vector<float> data_;
    bool initialized_ = false;
};

/// InfoNCE against the bank: weighted mean over rows of
///   -log softmax(f_q . d^T / tau)[j].
/// Gradients reach f_q only.
template <typename T>
Tensor<T> info_nce(const Tensor<T>& f_q, const Tensor<T>& bank, const std::vector<std::size_t>& positives, double tau,
                   const std::vector<T>& weights = {}) {
    if (!(tau > 0)) throw ConfigError("info_nce: temperature must be positive");
    if (bank.requires_grad()) throw ConfigError("info_nce: bank must not require gradients");
    for (auto j : positives)
        if (j >= bank.rows()) throw IndexError("info_nce: positive index out of range");
    return cross_entropy(scale(matmul_nt(f_q, bank), T(1.0 / tau)), positives, weights);
}

template <typename T>
Tensor<T> info_nce(const Tensor<T>& f_q, const MemoryBank& bank, const std::vector<std::size_t>& positives, double tau,
                   const std::vector<T>& weights = {}) {
    return info_nce(f_q, bank.as_tensor<T>(), positives, tau, weights);
}

/// Bottleneck (batch norm with running statistics) then a bias-free linear map to M logits.
template <typename T>
class ClassifierHead {
public:
    ClassifierHead() = default;
    ClassifierHead(std::size_t dim, std::size_t classes, Rng& rng, double running_momentum = 0.1)
        : dim_(dim), classes_(classes), momentum_(running_momentum) {
        gamma_ = init_const<T>({dim}, 1.0);
        beta_ = init_const<T>({dim}, 0.0);
        weight_ = init_trunc_normal<T>({dim, classes}, rng, 0.001);
        running_mean_.assign(dim, T(0));
        running_var_.assign(dim, T(1));
    }

    std::size_t dim() const { return dim_; }
    std::size_t classes() const { return classes_; }

    /// Training mode normalizes with batch statistics and folds them into the
    /// running averages; evaluation uses the running averages.
    Tensor<T> forward(const Tensor<T>& x, bool training) {
        if (x.cols() != dim_) throw DimensionError("classifier head: feature dim mismatch");
        Tensor<T> normed;
        if (training && x.rows() > 1) {
            std::vector<T> mean, var;
            normed = batch_norm_train(x, gamma_, beta_, &mean, &var);
            for (std::size_t j = 0; j < dim_; ++j) {
                running_mean_[j] = T(1 - momentum_) * running_mean_[j] + T(momentum_) * mean[j];
                running_var_[j] = T(1 - momentum_) * running_var_[j] + T(momentum_) * var[j];
            }
        } else {
            normed = batch_norm_eval(x, gamma_, beta_, std::span<const T>(running_mean_),
                                     std::span<const T>(running_var_));
        }
        return linear(normed, weight_);
    }

    void collect_parameters(const std::string& prefix, ParamList<T>& out) const {
        out.emplace_back(prefix + "bn/gamma", gamma_);
        out.emplace_back(prefix + "bn/beta", beta_);
        out.emplace_back(prefix + "fc/weight", weight_);
    }

    /// Running statistics as (mean, var) buffers, for checkpoints.
    std::vector<T>& running_mean() { return running_mean_; }
    std::vector<T>& running_var() { return running_var_; }
    const std::vector<T>& running_mean() const { return running_mean_; }
    const std::vector<T>& running_var() const { return running_var_; }

private:
    std::size_t dim_ = 0, classes_ = 0;
    double momentum_ = 0.1;
    Tensor<T> gamma_, beta_, weight_;
    std::vector<T> running_mean_, running_var_;
};

template <typename T>
struct ClassificationTerms {
    Tensor<T> total;
    std::vector<Tensor<T>> per_head;
};

/// Sum of one cross-entropy per head; features[i] feeds heads[i].
template <typename T>
ClassificationTerms<T> classification_loss(std::vector<ClassifierHead<T>>& heads,
                                           const std::vector<Tensor<T>>& features,
                                           const std::vector<std::size_t>& labels, bool training = true) {
    if (heads.size() != features.size() || heads.empty()) {
        throw ConfigError("classification_loss: " + std::to_string(features.size()) + " features for " +
                          std::to_string(heads.size()) + " heads");
    }
    for (auto y : labels)
        if (y >= heads.front().classes()) throw IndexError("classification_loss: label " + std::to_string(y) + " out of range");
    ClassificationTerms<T> out;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        out.per_head.push_back(cross_entropy(heads[h].forward(features[h], training), labels));
    }
    out.total = add_scalars(out.per_head);
    return out;
}

/// L_total = L_con + L_cls.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_con, const Tensor<T>& l_cls) {
    return add(l_con, l_cls);
}

struct LossReport {
    double l_con = 0;
    double l_cls = 0;
    double l_total = 0;
    std::vector<double> per_head;
    std::vector<bool> augmented;
};

}  // namespace dpef
