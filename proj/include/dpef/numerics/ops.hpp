// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "dpef/numerics/tensor.hpp"

namespace dpef {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kL2NormEps = 1e-12;

namespace detail {

// C[m x n] += op(A) * op(B), fixed summation order.
template <typename T>
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
              T* c) {
    if (!trans_a && !trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = a[i * k + p];
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            const T* arow = a + i * k;
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T acc = T(0);
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                c[i * n + j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (std::size_t p = 0; p < k; ++p) {
            const T* arow = a + p * m;
            const T* brow = b + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const T av = arow[i];
                T* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                T acc = T(0);
                for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
                c[i * n + j] += acc;
            }
        }
    }
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
    if (!t.defined() || t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " +
                             (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
    }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    auto A = a.storage(), B = b.storage();
    return detail::emit<T>(
        "matmul", {m, n},
        [A, B, m, n, k] {
            std::vector<T> out(m * n, T(0));
            detail::gemm_acc(false, false, m, n, k, A->data.data(), B->data.data(), out.data());
            return out;
        },
        {a, b},
        [A, B, m, n, k](std::span<const T> g) {
            if (A->requires_grad) detail::gemm_acc(false, true, m, k, n, g.data(), B->data.data(), A->ensure_grad().data());
            if (B->requires_grad) detail::gemm_acc(true, false, k, n, m, A->data.data(), g.data(), B->ensure_grad().data());
        });
}

/// a * b^T without materializing the transpose.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw DimensionError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
    }
    auto A = a.storage(), B = b.storage();
    return detail::emit<T>(
        "matmul_nt", {m, n},
        [A, B, m, n, k] {
            std::vector<T> out(m * n, T(0));
            detail::gemm_acc(false, true, m, n, k, A->data.data(), B->data.data(), out.data());
            return out;
        },
        {a, b},
        [A, B, m, n, k](std::span<const T> g) {
            // dA = g * B, dB = g^T * A
            if (A->requires_grad) detail::gemm_acc(false, false, m, k, n, g.data(), B->data.data(), A->ensure_grad().data());
            if (B->requires_grad) detail::gemm_acc(true, false, n, k, m, g.data(), A->data.data(), B->ensure_grad().data());
        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_matrix(a, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    auto A = a.storage();
    return detail::emit<T>(
        "transpose", {n, m},
        [A, m, n] {
            std::vector<T> out(m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A->data[i * n + j];
            return out;
        },
        {a},
        [A, m, n](std::span<const T> g) {
            if (!A->requires_grad) return;
            auto ga = A->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    auto A = a.storage(), B = b.storage();
    return detail::emit<T>(
        "add", a.shape(),
        [A, B] {
            std::vector<T> out(A->data.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = A->data[i] + B->data[i];
            return out;
        },
        {a, b},
        [A, B](std::span<const T> g) {
            if (A->requires_grad) {
                auto ga = A->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (B->requires_grad) {
                auto gb = B->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    auto A = a.storage(), B = b.storage();
    return detail::emit<T>(
        "mul", a.shape(),
        [A, B] {
            std::vector<T> out(A->data.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = A->data[i] * B->data[i];
            return out;
        },
        {a, b},
        [A, B](std::span<const T> g) {
            if (A->requires_grad) {
                auto ga = A->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B->data[i];
            }
            if (B->requires_grad) {
                auto gb = B->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A->data[i];
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    auto A = a.storage();
    return detail::emit<T>(
        "scale", a.shape(),
        [A, s] {
            std::vector<T> out(A->data.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = A->data[i] * s;
            return out;
        },
        {a},
        [A, s](std::span<const T> g) {
            if (!A->requires_grad) return;
            auto ga = A->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        });
}

/// x[m x n] + bias[1 x n] broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require_matrix(x, "add_row");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (bias.numel() != n) throw DimensionError("add_row: bias extent " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
    auto X = x.storage(), Bv = bias.storage();
    return detail::emit<T>(
        "add_row", x.shape(),
        [X, Bv, m, n] {
            std::vector<T> out(m * n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) out[i * n + j] = X->data[i * n + j] + Bv->data[j];
            return out;
        },
        {x, bias},
        [X, Bv, m, n](std::span<const T> g) {
            if (X->requires_grad) {
                auto gx = X->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (Bv->requires_grad) {
                auto gb = Bv->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        });
}

/// x[m x k] * w[k x n] + b[1 x n]; `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
    detail::require_matrix(x, "linear");
    detail::require_matrix(weight, "linear");
    const std::size_t m = x.dim(0), k = x.dim(1), n = weight.dim(1);
    if (weight.dim(0) != k) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != n) throw DimensionError("linear: bias extent " + shape_str(bias.shape()));
    auto X = x.storage(), W = weight.storage();
    auto Bv = has_bias ? bias.storage() : detail::StoragePtr<T>{};
    auto forward = [X, W, Bv, m, n, k] {
        std::vector<T> out(m * n, T(0));
        if (Bv) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) out[i * n + j] = Bv->data[j];
        }
        detail::gemm_acc(false, false, m, n, k, X->data.data(), W->data.data(), out.data());
        return out;
    };
    auto backward = [X, W, Bv, m, n, k](std::span<const T> g) {
        if (X->requires_grad) detail::gemm_acc(false, true, m, k, n, g.data(), W->data.data(), X->ensure_grad().data());
        if (W->requires_grad) detail::gemm_acc(true, false, k, n, m, X->data.data(), g.data(), W->ensure_grad().data());
        if (Bv && Bv->requires_grad) {
            auto gb = Bv->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
    };
    if (has_bias) return detail::emit<T>("linear", {m, n}, forward, {x, weight, bias}, backward);
    return detail::emit<T>("linear", {m, n}, forward, {x, weight}, backward);
}

/// tanh-approximated GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    auto X = x.storage();
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T a = T(0.044715);
    return detail::emit<T>(
        "gelu", x.shape(),
        [X] {
            std::vector<T> out(X->data.size());
            for (std::size_t i = 0; i < out.size(); ++i) {
                const T v = X->data[i];
                out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
            }
            return out;
        },
        {x},
        [X](std::span<const T> g) {
            if (!X->requires_grad) return;
            auto gx = X->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T v = X->data[i];
                const T t = std::tanh(c * (v + a * v * v * v));
                const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
                gx[i] += g[i] * d;
            }
        });
}

/// Softmax along the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    const std::size_t n = x.cols();
    const std::size_t rows = x.numel() / n;
    auto X = x.storage();
    auto forward = [X, rows, n] {
        std::vector<T> out(rows * n);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = X->data.data() + r * n;
            T* o = out.data() + r * n;
            const T mx = *std::max_element(in, in + n);
            T sum = T(0);
            for (std::size_t j = 0; j < n; ++j) {
                o[j] = std::exp(in[j] - mx);
                sum += o[j];
            }
            for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
        }
        return out;
    };
    auto backward = [X, rows, n, forward](std::span<const T> g) {
        if (!X->requires_grad) return;
        const std::vector<T> y = forward();
        auto gx = X->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * n;
            const T* gr = g.data() + r * n;
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yr[j] * (gr[j] - dot);
        }
    };
    return detail::emit<T>("softmax", x.shape(), forward, {x}, backward);
}

/// Per-row layer normalization over the last axis, then gamma/beta affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(kLayerNormEps)) {
    const std::size_t d = x.cols();
    if (d < 2) throw DimensionError("layer_norm: last extent must be >= 2");
    if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine extent mismatch");
    const std::size_t rows = x.numel() / d;
    auto X = x.storage(), G = gamma.storage(), Bt = beta.storage();
    auto forward = [X, G, Bt, rows, d, eps] {
        std::vector<T> out(rows * d);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = X->data.data() + r * d;
            T mean = T(0);
            for (std::size_t j = 0; j < d; ++j) mean += in[j];
            mean /= T(d);
            T var = T(0);
            for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
            var /= T(d);
            const T inv = T(1) / std::sqrt(var + eps);
            for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (in[j] - mean) * inv * G->data[j] + Bt->data[j];
        }
        return out;
    };
    auto backward = [X, G, Bt, rows, d, eps](std::span<const T> g) {
        std::vector<T> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = X->data.data() + r * d;
            const T* gr = g.data() + r * d;
            T mean = T(0);
            for (std::size_t j = 0; j < d; ++j) mean += in[j];
            mean /= T(d);
            T var = T(0);
            for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
            var /= T(d);
            const T inv = T(1) / std::sqrt(var + eps);
            T sum_dx = T(0), sum_dx_xhat = T(0);
            for (std::size_t j = 0; j < d; ++j) {
                xhat[j] = (in[j] - mean) * inv;
                dxhat[j] = gr[j] * G->data[j];
                sum_dx += dxhat[j];
                sum_dx_xhat += dxhat[j] * xhat[j];
            }
            if (G->requires_grad) {
                auto gg = G->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xhat[j];
            }
            if (Bt->requires_grad) {
                auto gb = Bt->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
            }
            if (X->requires_grad) {
                auto gx = X->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) {
                    gx[r * d + j] += inv * (dxhat[j] - sum_dx / T(d) - xhat[j] * sum_dx_xhat / T(d));
                }
            }
        }
    };
    return detail::emit<T>("layer_norm", x.shape(), forward, {x, gamma, beta}, backward);
}

/// Scales each row (last axis) to unit Euclidean norm.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(kL2NormEps)) {
    const std::size_t d = x.cols();
    const std::size_t rows = x.numel() / d;
    auto X = x.storage();
    for (std::size_t r = 0; r < rows; ++r) {
        T ss = T(0);
        for (std::size_t j = 0; j < d; ++j) ss += X->data[r * d + j] * X->data[r * d + j];
        if (std::sqrt(ss) <= eps) throw DegenerateInputError("l2_normalize: row " + std::to_string(r) + " has near-zero norm");
    }
    auto forward = [X, rows, d] {
        std::vector<T> out(rows * d);
        for (std::size_t r = 0; r < rows; ++r) {
            T ss = T(0);
            for (std::size_t j = 0; j < d; ++j) ss += X->data[r * d + j] * X->data[r * d + j];
            const T inv = T(1) / std::sqrt(ss);
            for (std::size_t j = 0; j < d; ++j) out[r * d + j] = X->data[r * d + j] * inv;
        }
        return out;
    };
    auto backward = [X, rows, d](std::span<const T> g) {
        if (!X->requires_grad) return;
        auto gx = X->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = X->data.data() + r * d;
            const T* gr = g.data() + r * d;
            T ss = T(0);
            for (std::size_t j = 0; j < d; ++j) ss += in[j] * in[j];
            const T norm = std::sqrt(ss);
            T dot = T(0);
            for (std::size_t j = 0; j < d; ++j) dot += gr[j] * in[j];
            dot /= norm;
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (gr[j] - (in[j] / norm) * dot) / norm;
        }
    };
    return detail::emit<T>("l2_normalize", x.shape(), forward, {x}, backward);
}

/// Batch normalization over rows with batch statistics (biased variance).
/// The batch mean and unbiased variance are written to `stats_out` for the
/// caller's running-average bookkeeping.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           std::vector<T>* mean_out = nullptr, std::vector<T>* var_out = nullptr,
                           T eps = T(kLayerNormEps)) {
    detail::require_matrix(x, "batch_norm");
    const std::size_t b = x.dim(0), d = x.dim(1);
    if (gamma.numel() != d || beta.numel() != d) throw DimensionError("batch_norm: affine extent mismatch");
    auto X = x.storage(), G = gamma.storage(), Bt = beta.storage();
    auto stats = [X, b, d, eps] {
        std::vector<T> mean(d, T(0)), inv(d, T(0)), var(d, T(0));
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) mean[j] += X->data[i * d + j];
        for (std::size_t j = 0; j < d; ++j) mean[j] /= T(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const T c = X->data[i * d + j] - mean[j];
                var[j] += c * c;
            }
        for (std::size_t j = 0; j < d; ++j) {
            var[j] /= T(b);
            inv[j] = T(1) / std::sqrt(var[j] + eps);
        }
        return std::tuple{mean, var, inv};
    };
    if (mean_out || var_out) {
        auto [mean, var, inv] = stats();
        if (mean_out) *mean_out = mean;
        if (var_out) {
            *var_out = var;
            if (b > 1)
                for (auto& v : *var_out) v = v * T(b) / T(b - 1);
        }
    }
    auto forward = [X, G, Bt, b, d, stats] {
        auto [mean, var, inv] = stats();
        std::vector<T> out(b * d);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out[i * d + j] = (X->data[i * d + j] - mean[j]) * inv[j] * G->data[j] + Bt->data[j];
        return out;
    };
    auto backward = [X, G, Bt, b, d, stats](std::span<const T> g) {
        auto [mean, var, inv] = stats();
        for (std::size_t j = 0; j < d; ++j) {
            T sum_dx = T(0), sum_dx_xhat = T(0), sum_g = T(0), sum_g_xhat = T(0);
            for (std::size_t i = 0; i < b; ++i) {
                const T xhat = (X->data[i * d + j] - mean[j]) * inv[j];
                const T gi = g[i * d + j];
                sum_g += gi;
                sum_g_xhat += gi * xhat;
                sum_dx += gi * G->data[j];
                sum_dx_xhat += gi * G->data[j] * xhat;
            }
            if (G->requires_grad) G->ensure_grad()[j] += sum_g_xhat;
            if (Bt->requires_grad) Bt->ensure_grad()[j] += sum_g;
            if (X->requires_grad) {
                auto gx = X->ensure_grad();
                for (std::size_t i = 0; i < b; ++i) {
                    const T xhat = (X->data[i * d + j] - mean[j]) * inv[j];
                    const T dxhat = g[i * d + j] * G->data[j];
                    gx[i * d + j] += inv[j] * (dxhat - sum_dx / T(b) - xhat * sum_dx_xhat / T(b));
                }
            }
        }
    };
    return detail::emit<T>("batch_norm", x.shape(), forward, {x, gamma, beta}, backward);
}

/// Batch normalization with frozen statistics: (x - mean) / sqrt(var + eps) * gamma + beta.
template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          std::span<const T> running_mean, std::span<const T> running_var,
                          T eps = T(kLayerNormEps)) {
    detail::require_matrix(x, "batch_norm_eval");
    const std::size_t b = x.dim(0), d = x.dim(1);
    if (gamma.numel() != d || beta.numel() != d || running_mean.size() != d || running_var.size() != d) {
        throw DimensionError("batch_norm_eval: extent mismatch");
    }
    std::vector<T> mean(running_mean.begin(), running_mean.end());
    std::vector<T> inv(d);
    for (std::size_t j = 0; j < d; ++j) inv[j] = T(1) / std::sqrt(running_var[j] + eps);
    auto X = x.storage(), G = gamma.storage(), Bt = beta.storage();
    return detail::emit<T>(
        "batch_norm_eval", x.shape(),
        [X, G, Bt, b, d, mean, inv] {
            std::vector<T> out(b * d);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    out[i * d + j] = (X->data[i * d + j] - mean[j]) * inv[j] * G->data[j] + Bt->data[j];
            return out;
        },
        {x, gamma, beta},
        [X, G, Bt, b, d, mean, inv](std::span<const T> g) {
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    const T gi = g[i * d + j];
                    const T xhat = (X->data[i * d + j] - mean[j]) * inv[j];
                    if (X->requires_grad) X->ensure_grad()[i * d + j] += gi * inv[j] * G->data[j];
                    if (G->requires_grad) G->ensure_grad()[j] += gi * xhat;
                    if (Bt->requires_grad) Bt->ensure_grad()[j] += gi;
                }
        });
}

/// Row-major reinterpretation; data order is unchanged.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    auto X = x.storage();
    return detail::emit<T>(
        "reshape", std::move(shape), [X] { return X->data; }, {x},
        [X](std::span<const T> g) {
            if (!X->requires_grad) return;
            auto gx = X->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
}

/// Rows [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    detail::require_matrix(x, "slice_rows");
    const std::size_t n = x.dim(1);
    if (begin >= end || end > x.dim(0)) throw DimensionError("slice_rows: bad range");
    auto X = x.storage();
    return detail::emit<T>(
        "slice_rows", {end - begin, n},
        [X, begin, end, n] {
            return std::vector<T>(X->data.begin() + begin * n, X->data.begin() + end * n);
        },
        {x},
        [X, begin, n](std::span<const T> g) {
            if (!X->requires_grad) return;
            auto gx = X->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
        });
}

/// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    detail::require_matrix(x, "slice_cols");
    const std::size_t m = x.dim(0), n = x.dim(1), w = end - begin;
    if (begin >= end || end > n) throw DimensionError("slice_cols: bad range");
    auto X = x.storage();
    return detail::emit<T>(
        "slice_cols", {m, w},
        [X, m, n, w, begin] {
            std::vector<T> out(m * w);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) out[i * w + j] = X->data[i * n + begin + j];
            return out;
        },
        {x},
        [X, m, n, w, begin](std::span<const T> g) {
            if (!X->requires_grad) return;
            auto gx = X->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
    const std::size_t n = parts.front().cols();
    std::size_t total = 0;
    std::vector<detail::StoragePtr<T>> S;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_rows");
        if (p.cols() != n) throw DimensionError("concat_rows: column extents differ");
        total += p.rows();
        S.push_back(p.storage());
    }
    return detail::emit_n<T>(
        "concat_rows", {total, n},
        [S] {
            std::vector<T> out;
            for (const auto& s : S) out.insert(out.end(), s->data.begin(), s->data.end());
            return out;
        },
        parts,
        [S](std::span<const T> g) {
            std::size_t off = 0;
            for (const auto& s : S) {
                if (s->requires_grad) {
                    auto gs = s->ensure_grad();
                    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += g[off + i];
                }
                off += s->data.size();
            }
        });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    const std::size_t m = parts.front().rows();
    std::size_t total = 0;
    std::vector<detail::StoragePtr<T>> S;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_cols");
        if (p.rows() != m) throw DimensionError("concat_cols: row extents differ");
        total += p.cols();
        S.push_back(p.storage());
        widths.push_back(p.cols());
    }
    return detail::emit_n<T>(
        "concat_cols", {m, total},
        [S, widths, m, total] {
            std::vector<T> out(m * total);
            std::size_t off = 0;
            for (std::size_t p = 0; p < S.size(); ++p) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < widths[p]; ++j) out[i * total + off + j] = S[p]->data[i * widths[p] + j];
                off += widths[p];
            }
            return out;
        },
        parts,
        [S, widths, m, total](std::span<const T> g) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < S.size(); ++p) {
                if (S[p]->requires_grad) {
                    auto gs = S[p]->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < widths[p]; ++j) gs[i * widths[p] + j] += g[i * total + off + j];
                }
                off += widths[p];
            }
        });
}

/// Mean of each row group: out[g] = mean_{i in groups[g]} x[i].
template <typename T>
Tensor<T> group_mean_rows(const Tensor<T>& x, const std::vector<std::vector<std::size_t>>& groups) {
    detail::require_matrix(x, "group_mean_rows");
    const std::size_t n = x.dim(1);
    for (const auto& grp : groups) {
        if (grp.empty()) throw DimensionError("group_mean_rows: empty group");
        for (auto i : grp)
            if (i >= x.dim(0)) throw IndexError("group_mean_rows: row index out of range");
    }
    auto X = x.storage();
    return detail::emit<T>(
        "group_mean_rows", {groups.size(), n},
        [X, groups, n] {
            std::vector<T> out(groups.size() * n, T(0));
            for (std::size_t g = 0; g < groups.size(); ++g) {
                for (auto i : groups[g])
                    for (std::size_t j = 0; j < n; ++j) out[g * n + j] += X->data[i * n + j];
                const T inv = T(1) / T(groups[g].size());
                for (std::size_t j = 0; j < n; ++j) out[g * n + j] *= inv;
            }
            return out;
        },
        {x},
        [X, groups, n](std::span<const T> g) {
            if (!X->requires_grad) return;
            auto gx = X->ensure_grad();
            for (std::size_t gi = 0; gi < groups.size(); ++gi) {
                const T inv = T(1) / T(groups[gi].size());
                for (auto i : groups[gi])
                    for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[gi * n + j] * inv;
            }
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    auto X = x.storage();
    return detail::emit<T>(
        "sum", {1},
        [X] {
            T acc = T(0);
            for (const T& v : X->data) acc += v;
            return std::vector<T>{acc};
        },
        {x},
        [X](std::span<const T> g) {
            if (!X->requires_grad) return;
            auto gx = X->ensure_grad();
            for (auto& v : gx) v += g[0];
        });
}

/// Sum of scalars (rank-1, single element each).
template <typename T>
Tensor<T> add_scalars(const std::vector<Tensor<T>>& terms) {
    if (terms.empty()) throw DimensionError("add_scalars: no terms");
    std::vector<detail::StoragePtr<T>> S;
    for (const auto& t : terms) {
        if (t.numel() != 1) throw DimensionError("add_scalars: term is not a scalar");
        S.push_back(t.storage());
    }
    return detail::emit_n<T>(
        "add_scalars", {1},
        [S] {
            T acc = T(0);
            for (const auto& s : S) acc += s->data[0];
            return std::vector<T>{acc};
        },
        terms,
        [S](std::span<const T> g) {
            for (const auto& s : S)
                if (s->requires_grad) s->ensure_grad()[0] += g[0];
        });
}

/// Weighted mean cross-entropy of row-wise logits:
///   (1/B) * sum_i w_i * (logsumexp(z_i) - z_i[y_i]).
/// `weights` empty means all ones.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                        const std::vector<T>& weights = {}) {
    detail::require_matrix(logits, "cross_entropy");
    const std::size_t b = logits.dim(0), m = logits.dim(1);
    if (labels.size() != b) throw DimensionError("cross_entropy: label count mismatch");
    if (!weights.empty() && weights.size() != b) throw DimensionError("cross_entropy: weight count mismatch");
    for (auto y : labels)
        if (y >= m) throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range");
    std::vector<T> w = weights.empty() ? std::vector<T>(b, T(1)) : weights;
    auto Z = logits.storage();
    auto forward = [Z, labels, w, b, m] {
        T total = T(0);
        for (std::size_t i = 0; i < b; ++i) {
            const T* z = Z->data.data() + i * m;
            const T mx = *std::max_element(z, z + m);
            T s = T(0);
            for (std::size_t j = 0; j < m; ++j) s += std::exp(z[j] - mx);
            total += w[i] * (mx + std::log(s) - z[labels[i]]);
        }
        return std::vector<T>{total / T(b)};
    };
    auto backward = [Z, labels, w, b, m](std::span<const T> g) {
        if (!Z->requires_grad) return;
        auto gz = Z->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
            const T* z = Z->data.data() + i * m;
            const T mx = *std::max_element(z, z + m);
            T s = T(0);
            for (std::size_t j = 0; j < m; ++j) s += std::exp(z[j] - mx);
            const T coef = g[0] * w[i] / T(b);
            for (std::size_t j = 0; j < m; ++j) {
                const T p = std::exp(z[j] - mx) / s;
                gz[i * m + j] += coef * (p - (j == labels[i] ? T(1) : T(0)));
            }
        }
    };
    return detail::emit<T>("cross_entropy", {1}, forward, {logits}, backward);
}

}  // namespace dpef
