// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include <nlohmann/json.hpp>

#include "dpef/eval.hpp"
#include "dpef/train.hpp"

namespace dpef {

struct RunOutcome {
    RetrievalMetrics metrics;
    std::optional<SelectionQuality> selection;  // when the query set carries body masks
    std::size_t steps = 0;
    double seconds = 0;
};

/// Retrieval and selection-quality numbers of a trained model.
template <typename T>
RunOutcome assess(const Model<T>& model, const Dataset& data, std::uint64_t seed) {
    RunOutcome out;
    out.metrics = evaluate(model, data);
    std::vector<IdentitySample> masked;
    for (const auto* split : {&data.query, &data.gallery})
        for (const auto& s : *split)
            if (s.body) masked.push_back(s);
    if (!masked.empty()) out.selection = selection_quality(model, masked, seed);
    return out;
}

/// Trains from scratch under `cfg`, then evaluates on its query/gallery split.
inline RunOutcome run_experiment(const RunConfig& cfg, const std::function<void(const StepReport&)>& on_step = {},
                                 const WarningSink& warn = warn_to_stderr) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = load_dataset(cfg);
    std::vector<MaskEntry> masks;
    if (cfg.train.augmentation == Augmentation::roa || cfg.train.augmentation == Augmentation::cut_paste) {
        masks = make_mask_bank(cfg, warn);
    }
    Trainer trainer(cfg, data, std::move(masks), warn);
    trainer.run(on_step);
    auto out = assess(trainer.model(), data, cfg.seed);
    out.steps = trainer.steps_done();
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

inline nlohmann::json to_json_report(const RunOutcome& r) {
    nlohmann::json j = {{"rank_1", r.metrics.rank(1)},
                        {"rank_5", r.metrics.rank(5)},
                        {"rank_10", r.metrics.rank(10)},
                        {"mAP", r.metrics.map},
                        {"cmc", r.metrics.cmc},
                        {"average_precision", r.metrics.average_precision},
                        {"evaluated_queries", r.metrics.evaluated},
                        {"skipped_queries", r.metrics.skipped}};
    if (r.selection) {
        j["selection"] = {{"precision", r.selection->precision},
                          {"random_precision", r.selection->random_precision},
                          {"body_fraction", r.selection->body_fraction},
                          {"mean_k", r.selection->mean_k},
                          {"images", r.selection->images}};
    }
    if (r.steps) j["steps"] = r.steps;
    return j;
}

}  // namespace dpef
