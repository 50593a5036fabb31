// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "dpef/augment.hpp"
#include "dpef/checkpoint.hpp"
#include "dpef/config.hpp"
#include "dpef/dataset.hpp"
#include "dpef/model.hpp"
#include "dpef/numerics/adam.hpp"
#include "dpef/objective.hpp"

namespace dpef {

/// Images, labels and augmentation flags for one optimization step.
struct PreparedBatch {
    std::vector<std::size_t> indices;
    std::vector<Image> images;
    std::vector<std::size_t> labels;
    std::vector<bool> augmented;
};

template <typename T>
struct BatchLoss {
    Tensor<T> total, l_con, l_cls;
    std::vector<Tensor<T>> per_head;
    std::vector<SampleOutput<T>> outputs;
};

/// L_con + L_cls for a prepared batch. Augmented samples weigh
/// `roa_weight` in the contrastive term. `forced` pins each sample's
/// selected tokens.
template <typename T>
BatchLoss<T> batch_loss(Model<T>& model, const PreparedBatch& batch, const MemoryBank& bank,
                        const MemoryBank* bank_final = nullptr, bool training = true,
                        const std::vector<std::vector<std::size_t>>* forced = nullptr) {
    const auto& cfg = model.config();
    BatchLoss<T> out;
    for (std::size_t b = 0; b < batch.images.size(); ++b) {
        out.outputs.push_back(model.forward(batch.images[b], forced ? &(*forced)[b] : nullptr));
    }
    std::vector<T> w(batch.images.size(), T(1));
    for (std::size_t b = 0; b < w.size(); ++b)
        if (batch.augmented[b]) w[b] = T(cfg.objective.roa_weight);

    std::vector<Tensor<T>> fq;
    for (const auto& o : out.outputs) fq.push_back(o.f_q);
    out.l_con = info_nce(fq.size() == 1 ? fq.front() : concat_rows(fq), bank, batch.labels, cfg.objective.tau, w);
    if (cfg.objective.contrastive_after_fbm) {
        if (!bank_final) throw ConfigError("batch_loss: contrastive_after_fbm needs the f_final bank");
        std::vector<Tensor<T>> ff;
        for (const auto& o : out.outputs) ff.push_back(l2_normalize(o.f_final));
        out.l_con = add(out.l_con, info_nce(ff.size() == 1 ? ff.front() : concat_rows(ff), *bank_final, batch.labels,
                                            cfg.objective.tau, w));
    }
    auto cls = classification_loss(model.heads(), model.head_inputs(out.outputs), batch.labels, training);
    out.l_cls = cls.total;
    out.per_head = cls.per_head;
    out.total = total_loss(out.l_con, out.l_cls);
    return out;
}

struct StepReport {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0;
    double seconds = 0;
    LossReport loss;
};

/// Loads the occluder bank named by the config: "synthetic" or a directory.
inline std::vector<MaskEntry> make_mask_bank(const RunConfig& cfg, const WarningSink& warn = warn_to_stderr) {
    if (cfg.train.mask_bank == "synthetic") return synth_masks(cfg.seed ^ 0xB4A5CULL, cfg.train.synth_mask_count);
    return load_mask_bank(cfg.train.mask_bank, warn);
}

/// Owns the float model, optimizer state and memory banks for one run.
class Trainer {
public:
    Trainer(const RunConfig& cfg, const Dataset& data, std::vector<MaskEntry> masks,
            const WarningSink& warn = warn_to_stderr)
        : cfg_(cfg), data_(&data), masks_(std::move(masks)), warn_(warn), model_(cfg, data.num_ids) {
        if (data.train.empty()) throw DataError("trainer: empty training split");
        if (cfg.train.augmentation == Augmentation::roa || cfg.train.augmentation == Augmentation::cut_paste) {
            if (masks_.empty()) throw ConfigError("trainer: occlusion augmentation needs a non-empty mask bank");
        }
        for (auto& [name, t] : model_.parameters()) {
            names_.push_back(name);
            params_.push_back(t);
        }
        init_banks();
    }

    const RunConfig& config() const { return cfg_; }
    Model<float>& model() { return model_; }
    const Model<float>& model() const { return model_; }
    const MemoryBank& bank() const { return bank_; }
    const MemoryBank& bank_final() const { return bank_final_; }
    std::size_t steps_done() const { return step_; }

    std::size_t steps_per_epoch() const {
        return (data_->train.size() + cfg_.batch_size() - 1) / cfg_.batch_size();
    }
    std::size_t total_steps() const {
        const std::size_t all = cfg_.train.epochs * steps_per_epoch();
        return cfg_.train.max_steps ? std::min(all, cfg_.train.max_steps) : all;
    }

    /// Cosine decay from lr to zero over the full schedule.
    double lr_at(std::size_t step) const {
        const double t = double(step) / double(std::max<std::size_t>(1, cfg_.train.epochs * steps_per_epoch()));
        return cfg_.train.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, t)));
    }

    /// Deterministic in (seed, step): PK draw, then per-sample flip and augmentation.
    PreparedBatch prepare_batch(std::size_t step) const {
        Rng pick = make_rng(cfg_.seed, {0xBA7C, step});
        PreparedBatch b;
        b.indices = pk_sample(data_->train, cfg_.train.ids_per_batch, cfg_.train.imgs_per_id, pick);
        for (std::size_t i = 0; i < b.indices.size(); ++i) {
            const auto& s = data_->train[b.indices[i]];
            Rng rng = make_rng(cfg_.seed, {0xA06, step, i});
            Image img = bernoulli(rng, cfg_.train.hflip_prob) ? flip_horizontal(s.image) : s.image;
            if (const long pad = long(cfg_.train.pad_crop); pad > 0) {
                const long dx = long(uniform_index(rng, std::size_t(2 * pad + 1))) - pad;
                const long dy = long(uniform_index(rng, std::size_t(2 * pad + 1))) - pad;
                img = translate(img, dx, dy);
            }
            bool aug = false;
            if (cfg_.train.augmentation != Augmentation::none && bernoulli(rng, cfg_.train.aug_prob)) {
                switch (cfg_.train.augmentation) {
                    case Augmentation::roa: {
                        auto r = roa(img, masks_, cfg_.roa, rng, warn_);
                        aug = r.plan.valid;
                        img = std::move(r.image);
                        break;
                    }
                    case Augmentation::cut_paste: {
                        auto r = cut_paste(img, masks_, cfg_.roa, rng, warn_);
                        aug = r.plan.valid;
                        img = std::move(r.image);
                        break;
                    }
                    case Augmentation::random_erase: {
                        auto p = cfg_.random_erase;
                        p.probability = 1.0;  // gated by aug_prob above
                        auto r = random_erase(img, rng, p);
                        aug = r.applied;
                        img = std::move(r.image);
                        break;
                    }
                    case Augmentation::none: break;
                }
            }
            b.images.push_back(std::move(img));
            b.labels.push_back(s.identity);
            b.augmented.push_back(aug);
        }
        return b;
    }

    /// One optimization step on the scheduled batch.
    StepReport step() { return step_on(prepare_batch(step_)); }

    /// Forward, backward, Adam, then EMA updates of the banks from the clean
    /// samples of `batch`.
    StepReport step_on(const PreparedBatch& batch) {
        const auto t0 = std::chrono::steady_clock::now();
        StepReport rep;
        rep.step = step_;
        rep.epoch = step_ / steps_per_epoch();
        rep.lr = lr_at(step_);
        try {
            Tape<float> tape;
            BatchLoss<float> loss;
            {
                typename Tape<float>::Scope scope(tape);
                loss = batch_loss(model_, batch, bank_, cfg_.objective.contrastive_after_fbm ? &bank_final_ : nullptr);
            }
            for (auto& p : params_) p.zero_grad();
            tape.backward(loss.total);
            adam_step(params_, adam_, rep.lr, cfg_.train.weight_decay);
            for (const auto& p : params_)
                for (float v : p.data())
                    if (!std::isfinite(v)) throw NonFiniteError("adam_step");

            rep.loss.l_con = loss.l_con.item();
            rep.loss.l_cls = loss.l_cls.item();
            rep.loss.l_total = loss.total.item();
            for (const auto& h : loss.per_head) rep.loss.per_head.push_back(h.item());
            rep.loss.augmented = batch.augmented;
            for (std::size_t b = 0; b < batch.images.size(); ++b) {
                if (batch.augmented[b]) continue;
                bank_.update(batch.labels[b], loss.outputs[b].f_q.data());
                if (cfg_.objective.contrastive_after_fbm) {
                    typename Tape<float>::Pause no_record;
                    bank_final_.update(batch.labels[b], l2_normalize(loss.outputs[b].f_final.detach()).data());
                }
            }
        } catch (const NonFiniteError& e) {
            throw NonFiniteError(e.op(), static_cast<long long>(step_));
        }
        ++step_;
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rep;
    }

    /// Runs the remaining steps; `on_step` sees every report.
    void run(const std::function<void(const StepReport&)>& on_step = {}) {
        while (step_ < total_steps()) {
            auto r = step();
            if (on_step) on_step(r);
        }
    }

    /// Parameters, Adam moments and step, banks and running statistics.
    std::vector<NamedArray> state() const {
        std::vector<NamedArray> out;
        auto shape_of = [](const Tensor<float>& t) {
            std::vector<std::uint64_t> s(t.shape().begin(), t.shape().end());
            return s;
        };
        for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"param/" + names_[i], shape_of(params_[i]), params_[i].values()});
        if (!adam_.m.empty()) {
            for (std::size_t i = 0; i < params_.size(); ++i) {
                out.push_back({"adam/m/" + names_[i], shape_of(params_[i]), adam_.m[i]});
                out.push_back({"adam/v/" + names_[i], shape_of(params_[i]), adam_.v[i]});
            }
        }
        out.push_back({"adam/step", {1}, {float(adam_.step)}});
        out.push_back({"trainer/step", {1}, {float(step_)}});
        auto bank_entry = [](const std::string& name, const MemoryBank& b) {
            return NamedArray{name, {b.size(), b.dim()}, std::vector<float>(b.data().begin(), b.data().end())};
        };
        out.push_back(bank_entry("bank/f_q", bank_));
        if (cfg_.objective.contrastive_after_fbm) out.push_back(bank_entry("bank/f_final", bank_final_));
        const auto& heads = model_.heads();
        for (std::size_t h = 0; h < heads.size(); ++h) {
            const std::string p = "head" + std::to_string(h) + "/bn/";
            out.push_back({p + "running_mean", {heads[h].dim()}, heads[h].running_mean()});
            out.push_back({p + "running_var", {heads[h].dim()}, heads[h].running_var()});
        }
        return out;
    }

    /// Restores everything `state()` wrote. All entries are checked before
    /// any state changes.
    void load_state(const std::vector<NamedArray>& entries) {
        std::map<std::string, const NamedArray*> by_name;
        for (const auto& e : entries) by_name[e.name] = &e;
        const auto expected = state();
        for (const auto& want : expected) {
            if (want.name.starts_with("adam/m/") || want.name.starts_with("adam/v/")) continue;
            auto it = by_name.find(want.name);
            if (it == by_name.end()) throw FormatError("checkpoint: missing entry " + want.name);
            if (it->second->shape != want.shape) throw FormatError("checkpoint: shape mismatch for " + want.name);
        }
        const bool has_moments = by_name.count("adam/m/" + names_.front()) > 0;
        if (has_moments) {
            for (std::size_t i = 0; i < params_.size(); ++i)
                for (const char* kind : {"adam/m/", "adam/v/"}) {
                    auto it = by_name.find(kind + names_[i]);
                    if (it == by_name.end() || it->second->values.size() != params_[i].numel()) {
                        throw FormatError(std::string("checkpoint: bad optimizer entry ") + kind + names_[i]);
                    }
                }
        }
        auto get = [&](const std::string& name) -> const std::vector<float>& { return by_name.at(name)->values; };

        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& v = get("param/" + names_[i]);
            std::copy(v.begin(), v.end(), params_[i].mutable_data().begin());
        }
        adam_ = {};
        adam_.step = static_cast<std::int64_t>(get("adam/step")[0]);
        if (has_moments) {
            for (std::size_t i = 0; i < params_.size(); ++i) {
                adam_.m.push_back(get("adam/m/" + names_[i]));
                adam_.v.push_back(get("adam/v/" + names_[i]));
            }
        }
        step_ = static_cast<std::size_t>(get("trainer/step")[0]);
        auto load_bank = [&](const std::string& name, MemoryBank& b) {
            const auto& v = get(name);
            std::copy(v.begin(), v.end(), b.mutable_data().begin());
            b.mark_initialized();
        };
        load_bank("bank/f_q", bank_);
        if (cfg_.objective.contrastive_after_fbm) load_bank("bank/f_final", bank_final_);
        auto& heads = model_.heads();
        for (std::size_t h = 0; h < heads.size(); ++h) {
            const std::string p = "head" + std::to_string(h) + "/bn/";
            heads[h].running_mean() = get(p + "running_mean");
            heads[h].running_var() = get(p + "running_var");
        }
    }

    void save(const std::filesystem::path& path) const { write_checkpoint(path, state()); }
    void load(const std::filesystem::path& path) { load_state(read_checkpoint(path)); }

private:
    /// Bank rows start at the per-identity mean over clean training images.
    void init_banks() {
        typename Tape<float>::Pause no_record;
        std::vector<std::vector<float>> fq, ff;
        std::vector<std::size_t> labels;
        for (const auto& s : data_->train) {
            auto out = model_.forward(s.image);
            fq.emplace_back(out.f_q.data().begin(), out.f_q.data().end());
            if (cfg_.objective.contrastive_after_fbm) {
                auto n = l2_normalize(out.f_final);
                ff.emplace_back(n.data().begin(), n.data().end());
            }
            labels.push_back(s.identity);
        }
        bank_ = MemoryBank::init(fq, labels, data_->num_ids, cfg_.objective.bank_momentum);
        if (cfg_.objective.contrastive_after_fbm) {
            bank_final_ = MemoryBank::init(ff, labels, data_->num_ids, cfg_.objective.bank_momentum);
        }
    }

    RunConfig cfg_;
    const Dataset* data_;
    std::vector<MaskEntry> masks_;
    WarningSink warn_;
    Model<float> model_;
    std::vector<std::string> names_;
    std::vector<Tensor<float>> params_;
    AdamState<float> adam_;
    MemoryBank bank_, bank_final_;
    std::size_t step_ = 0;
};

/// Inference model rebuilt from a trainer checkpoint. The class count is
/// read from the first head; optimizer state and banks are ignored.
inline Model<float> model_from_checkpoint(const RunConfig& cfg, const std::vector<NamedArray>& entries) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    auto it = by_name.find("param/head0/fc/weight");
    if (it == by_name.end() || it->second->shape.size() != 2) throw FormatError("checkpoint: no classifier head entry");
    Model<float> model(cfg, it->second->shape[1]);
    auto params = model.parameters();
    for (const auto& [name, t] : params) {
        auto e = by_name.find("param/" + name);
        if (e == by_name.end()) throw FormatError("checkpoint: missing entry param/" + name);
        if (e->second->values.size() != t.numel()) throw FormatError("checkpoint: shape mismatch for param/" + name);
    }
    for (std::size_t h = 0; h < model.heads().size(); ++h) {
        for (const char* stat : {"running_mean", "running_var"}) {
            const std::string key = "head" + std::to_string(h) + "/bn/" + stat;
            auto e = by_name.find(key);
            if (e == by_name.end() || e->second->values.size() != model.heads()[h].dim()) {
                throw FormatError("checkpoint: bad entry " + key);
            }
        }
    }
    for (auto& [name, t] : params) {
        const auto& v = by_name.at("param/" + name)->values;
        std::copy(v.begin(), v.end(), t.mutable_data().begin());
    }
    for (std::size_t h = 0; h < model.heads().size(); ++h) {
        const std::string p = "head" + std::to_string(h) + "/bn/";
        model.heads()[h].running_mean() = by_name.at(p + "running_mean")->values;
        model.heads()[h].running_var() = by_name.at(p + "running_var")->values;
    }
    return model;
}

/// Header plus one CSV row per step. Timing is left out so fixed-seed runs
/// write identical files.
class LossLog {
public:
    explicit LossLog(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw DataError("cannot write loss log " + path.string());
        out_.precision(9);
        out_ << "step,epoch,lr,l_con,l_cls,l_total,augmented\n";
    }
    void write(const StepReport& r) {
        std::size_t aug = 0;
        for (bool a : r.loss.augmented) aug += a;
        out_ << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.loss.l_con << ',' << r.loss.l_cls << ','
             << r.loss.l_total << ',' << aug << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

/// Synthetic benchmark or folder dataset, as the config requests.
inline Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.data.source == "synthetic") return synth_dataset(cfg.seed, cfg.data.synth);
    return load_folder_dataset(cfg.data.source, cfg.encoder.image_h, cfg.encoder.image_w);
}

}  // namespace dpef
