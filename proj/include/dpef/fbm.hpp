// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dpef/errors.hpp"
#include "dpef/numerics/ops.hpp"
#include "dpef/params.hpp"

namespace dpef {

struct FbmConfig {
    std::size_t dim = 64;
    std::size_t sub_size = 16;
    std::size_t heads = 1;
    double ffn_ratio = 4.0;
    bool projection_bias = true;  // the three stream projections
    bool output_bias = true;      // W^O

    std::size_t num_sub() const { return dim / sub_size; }
    std::size_t ffn_hidden() const { return static_cast<std::size_t>(std::lround(ffn_ratio * double(dim))); }

    void validate() const {
        if (sub_size == 0 || dim % sub_size != 0) {
            throw ConfigError("fbm: dim " + std::to_string(dim) + " not divisible by sub_size " +
                              std::to_string(sub_size));
        }
        if (sub_size < 2) throw ConfigError("fbm: sub_size must be >= 2 for row normalization");
        if (heads == 0) throw ConfigError("fbm: heads must be >= 1");
        if (ffn_hidden() == 0) throw ConfigError("fbm: ffn_ratio too small");
    }
};

template <typename T>
struct FbmWeights {
    Tensor<T> wq, bq, wk, bk, wv, bv;     // stream projections, c -> c
    Tensor<T> pe;                         // S x sub
    Tensor<T> ln_g, ln_b;                 // per sub-part row
    std::vector<Tensor<T>> hq, hk, hv;    // per head, sub x sub
    std::vector<Tensor<T>> hqb, hkb, hvb; // per head, sub
    Tensor<T> wo, bo;                     // (heads*sub) x sub
    Tensor<T> norm_g, norm_b;             // over c
    Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;

    static FbmWeights init(const FbmConfig& cfg, Rng& rng) {
        cfg.validate();
        const std::size_t c = cfg.dim, s = cfg.sub_size, hid = cfg.ffn_hidden();
        FbmWeights w;
        w.wq = init_trunc_normal<T>({c, c}, rng);
        w.wk = init_trunc_normal<T>({c, c}, rng);
        w.wv = init_trunc_normal<T>({c, c}, rng);
        if (cfg.projection_bias) {
            w.bq = init_const<T>({c}, 0.0);
            w.bk = init_const<T>({c}, 0.0);
            w.bv = init_const<T>({c}, 0.0);
        }
        w.pe = init_trunc_normal<T>({cfg.num_sub(), s}, rng);
        w.ln_g = init_const<T>({s}, 1.0);
        w.ln_b = init_const<T>({s}, 0.0);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            w.hq.push_back(init_trunc_normal<T>({s, s}, rng));
            w.hk.push_back(init_trunc_normal<T>({s, s}, rng));
            w.hv.push_back(init_trunc_normal<T>({s, s}, rng));
            w.hqb.push_back(init_const<T>({s}, 0.0));
            w.hkb.push_back(init_const<T>({s}, 0.0));
            w.hvb.push_back(init_const<T>({s}, 0.0));
        }
        w.wo = init_trunc_normal<T>({cfg.heads * s, s}, rng);
        if (cfg.output_bias) w.bo = init_const<T>({s}, 0.0);
        w.norm_g = init_const<T>({c}, 1.0);
        w.norm_b = init_const<T>({c}, 0.0);
        w.fc1_w = init_trunc_normal<T>({c, hid}, rng);
        w.fc1_b = init_const<T>({hid}, 0.0);
        w.fc2_w = init_trunc_normal<T>({hid, c}, rng);
        w.fc2_b = init_const<T>({c}, 0.0);
        return w;
    }

    void collect_parameters(const std::string& prefix, ParamList<T>& out) const {
        auto put = [&](const std::string& name, const Tensor<T>& t) {
            if (t.defined()) out.emplace_back(prefix + name, t);
        };
        put("proj_q/weight", wq);
        put("proj_q/bias", bq);
        put("proj_k/weight", wk);
        put("proj_k/bias", bk);
        put("proj_v/weight", wv);
        put("proj_v/bias", bv);
        put("pos_embed", pe);
        put("sub_ln/gamma", ln_g);
        put("sub_ln/beta", ln_b);
        for (std::size_t h = 0; h < hq.size(); ++h) {
            const std::string p = "head" + std::to_string(h) + "/";
            put(p + "q/weight", hq[h]);
            put(p + "q/bias", hqb[h]);
            put(p + "k/weight", hk[h]);
            put(p + "k/bias", hkb[h]);
            put(p + "v/weight", hv[h]);
            put(p + "v/bias", hvb[h]);
        }
        put("out/weight", wo);
        put("out/bias", bo);
        put("norm/gamma", norm_g);
        put("norm/beta", norm_b);
        put("ffn/fc1/weight", fc1_w);
        put("ffn/fc1/bias", fc1_b);
        put("ffn/fc2/weight", fc2_w);
        put("ffn/fc2/bias", fc2_b);
    }
};

template <typename T>
struct BlendOutput {
    Tensor<T> feature;                 // f_fbm, 1 x c
    Tensor<T> mhsa;                    // f_mhsa before the residual, 1 x c
    std::vector<Tensor<T>> attention;  // per head, S x S (query rows from the part stream)
};

/// Cross-stream attention over sub-parts: queries from the part feature, keys
/// and values from two projections of the global feature, then residual + FFN.
template <typename T>
BlendOutput<T> blend(const Tensor<T>& f_g, const Tensor<T>& f_part, const FbmWeights<T>& w, const FbmConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.dim, s = cfg.sub_size, n_sub = cfg.num_sub();
    if (f_g.shape() != Shape{1, c} || f_part.shape() != Shape{1, c}) {
        throw ConfigError("fbm: expected 1x" + std::to_string(c) + " inputs, got " + shape_str(f_g.shape()) +
                          " and " + shape_str(f_part.shape()));
    }
    if (w.hq.size() != cfg.heads) throw ConfigError("fbm: weight head count differs from config");

    auto partition = [&](const Tensor<T>& x) {
        return layer_norm(add(reshape(x, {n_sub, s}), w.pe), w.ln_g, w.ln_b);
    };
    auto xq = partition(linear(f_part, w.wq, w.bq));
    auto xk = partition(linear(f_g, w.wk, w.bk));
    auto xv = partition(linear(f_g, w.wv, w.bv));

    const T inv_sqrt = T(1.0 / std::sqrt(double(s)));
    BlendOutput<T> out;
    std::vector<Tensor<T>> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        auto q = linear(xq, w.hq[h], w.hqb[h]);
        auto k = linear(xk, w.hk[h], w.hkb[h]);
        auto v = linear(xv, w.hv[h], w.hvb[h]);
        auto a = softmax(scale(matmul_nt(q, k), inv_sqrt));
        out.attention.push_back(a);
        heads.push_back(matmul(a, v));
    }
    auto merged = linear(heads.size() == 1 ? heads.front() : concat_cols(heads), w.wo, w.bo);
    out.mhsa = reshape(merged, {1, c});

    auto y = layer_norm(add(f_part, out.mhsa), w.norm_g, w.norm_b);
    auto ffn = linear(gelu(linear(y, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b);
    out.feature = add(y, ffn);
    return out;
}

/// Ablation fusion used by the baseline wiring: f_part + f_g.
template <typename T>
Tensor<T> add_fusion(const Tensor<T>& f_g, const Tensor<T>& f_part) {
    return add(f_part, f_g);
}

/// f_final: part features concatenated in part order (1 x P*c).
template <typename T>
Tensor<T> build_descriptor(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw AssemblyError("build_descriptor: no part features");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!parts[i].defined()) throw AssemblyError("build_descriptor: part " + std::to_string(i) + " missing");
        if (parts[i].shape() != parts.front().shape() || parts[i].rows() != 1) {
            throw AssemblyError("build_descriptor: part " + std::to_string(i) + " has shape " +
                                shape_str(parts[i].shape()));
        }
    }
    return parts.size() == 1 ? parts.front() : concat_cols(parts);
}

}  // namespace dpef
