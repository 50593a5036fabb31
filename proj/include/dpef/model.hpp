// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "dpef/config.hpp"
#include "dpef/dpsm.hpp"
#include "dpef/encoder.hpp"
#include "dpef/fbm.hpp"
#include "dpef/objective.hpp"

namespace dpef {

/// Everything one image produces on the way to its descriptor.
template <typename T>
struct SampleOutput {
    SelectionResult<T> selection;
    Tensor<T> f_g;                    // 1 x c
    Tensor<T> f_q;                    // 1 x P*c, pooled over every patch
    std::vector<Tensor<T>> parts;     // P tensors of 1 x c after fusion
    Tensor<T> f_final;                // 1 x P*c
};

/// Encoder, selection, per-part fusion and the classifier heads.
/// Head order: one per part, then f_q, f_g, f_final.
template <typename T>
class Model {
public:
    Model() = default;
    Model(const RunConfig& cfg, std::size_t classes) : cfg_(cfg), classes_(classes) {
        cfg.validate();
        if (classes < 2) throw ConfigError("model: need at least 2 classes");
        Rng rng = make_rng(cfg.seed, {0x1417});
        encoder_ = Encoder<T>(cfg.encoder, rng);
        const std::size_t P = cfg.selection.parts, c = cfg.encoder.dim;
        if (cfg.fusion == Fusion::blend) {
            for (std::size_t i = 0; i < P; ++i) fbms_.push_back(FbmWeights<T>::init(cfg.fbm, rng));
        }
        for (std::size_t i = 0; i < P; ++i) heads_.emplace_back(c, classes, rng, cfg.objective.head_bn_momentum);
        heads_.emplace_back(P * c, classes, rng, cfg.objective.head_bn_momentum);
        heads_.emplace_back(c, classes, rng, cfg.objective.head_bn_momentum);
        heads_.emplace_back(P * c, classes, rng, cfg.objective.head_bn_momentum);
    }

    const RunConfig& config() const { return cfg_; }
    std::size_t classes() const { return classes_; }
    const Encoder<T>& encoder() const { return encoder_; }
    std::vector<ClassifierHead<T>>& heads() { return heads_; }
    const std::vector<ClassifierHead<T>>& heads() const { return heads_; }

    ParamList<T> parameters() const {
        ParamList<T> out;
        encoder_.collect_parameters("encoder/", out);
        for (std::size_t i = 0; i < fbms_.size(); ++i) fbms_[i].collect_parameters("fbm" + std::to_string(i) + "/", out);
        for (std::size_t i = 0; i < heads_.size(); ++i) heads_[i].collect_parameters("head" + std::to_string(i) + "/", out);
        return out;
    }

    /// `forced_selected` replaces the score-based gate (used to hold the
    /// selection fixed while differentiating).
    SampleOutput<T> forward(const Image& image, const std::vector<std::size_t>* forced_selected = nullptr) const {
        const std::size_t P = cfg_.selection.parts;
        auto tokens = encoder_.encode(image);
        SampleOutput<T> out;
        out.f_g = tokens.cls;
        out.f_q = pool_all_tokens(tokens, P);
        if (cfg_.objective.normalize_fq) out.f_q = l2_normalize(out.f_q);
        Tensor<T> pooled;
        if (forced_selected) {
            out.selection.selected = *forced_selected;
            out.selection.k = forced_selected->size();
            pooled = pool_selected(tokens, *forced_selected, P);
        } else {
            out.selection = select(tokens, cfg_.selection);
            pooled = out.selection.parts;
        }
        for (std::size_t i = 0; i < P; ++i) {
            auto part = slice_rows(pooled, i, i + 1);
            out.parts.push_back(cfg_.fusion == Fusion::blend ? blend(out.f_g, part, fbms_[i], cfg_.fbm).feature
                                                             : add_fusion(out.f_g, part));
        }
        out.f_final = build_descriptor(out.parts);
        return out;
    }

    /// Per-head inputs for a batch of forward outputs, in head order.
    std::vector<Tensor<T>> head_inputs(const std::vector<SampleOutput<T>>& batch) const {
        const std::size_t P = cfg_.selection.parts;
        std::vector<Tensor<T>> feats;
        auto stack = [&](auto pick) {
            std::vector<Tensor<T>> rows;
            for (const auto& s : batch) rows.push_back(pick(s));
            return rows.size() == 1 ? rows.front() : concat_rows(rows);
        };
        for (std::size_t i = 0; i < P; ++i) feats.push_back(stack([i](const SampleOutput<T>& s) { return s.parts[i]; }));
        feats.push_back(stack([](const SampleOutput<T>& s) { return s.f_q; }));
        feats.push_back(stack([](const SampleOutput<T>& s) { return s.f_g; }));
        feats.push_back(stack([](const SampleOutput<T>& s) { return s.f_final; }));
        return feats;
    }

    /// Retrieval descriptor for one image.
    std::vector<float> descriptor(const Image& image) const {
        typename Tape<T>::Pause no_record;
        auto out = forward(image);
        Tensor<T> d = cfg_.eval.use_pre_dpsm_features ? out.f_q : out.f_final;
        if (cfg_.eval.normalize) d = l2_normalize(d);
        return {d.data().begin(), d.data().end()};
    }

private:
    RunConfig cfg_;
    std::size_t classes_ = 0;
    Encoder<T> encoder_;
    std::vector<FbmWeights<T>> fbms_;
    std::vector<ClassifierHead<T>> heads_;
};

}  // namespace dpef
