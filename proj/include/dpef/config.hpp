// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "dpef/augment.hpp"
#include "dpef/dataset.hpp"
#include "dpef/dpsm.hpp"
#include "dpef/encoder.hpp"
#include "dpef/errors.hpp"
#include "dpef/fbm.hpp"

namespace dpef {

enum class Fusion { blend, add };
enum class Augmentation { none, roa, random_erase, cut_paste };

struct ObjectiveConfig {
    double tau = 0.05;
    double bank_momentum = 0.2;
    double roa_weight = 0.3;        // InfoNCE weight of augmented samples
    bool normalize_fq = true;
    bool contrastive_after_fbm = false;
    double head_bn_momentum = 0.1;
};

struct TrainConfig {
    std::size_t ids_per_batch = 8;
    std::size_t imgs_per_id = 4;
    std::size_t epochs = 50;
    std::size_t max_steps = 0;  // 0: run every epoch
    double lr = 3e-3;
    double weight_decay = 1e-4;
    Augmentation augmentation = Augmentation::roa;
    double aug_prob = 0.5;
    double hflip_prob = 0.5;
    std::size_t pad_crop = 4;  // random shift of up to this many pixels, zero fill
    std::string mask_bank = "synthetic";  // "synthetic" or a directory of RGBA PNGs
    std::size_t synth_mask_count = 200;
};

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" or a folder with train/query/gallery
    SynthOptions synth{};
};

struct EvalConfig {
    bool use_pre_dpsm_features = false;
    bool normalize = true;
};

struct RunConfig {
    std::uint64_t seed = 0;
    EncoderConfig encoder{};
    SelectionConfig selection{};
    FbmConfig fbm{};
    Fusion fusion = Fusion::blend;
    ObjectiveConfig objective{};
    TrainConfig train{};
    RoaParams roa{};
    RandomEraseParams random_erase{};
    DataConfig data{};
    EvalConfig eval{};

    std::size_t batch_size() const { return train.ids_per_batch * train.imgs_per_id; }

    void validate() const {
        encoder.validate(selection.parts);
        selection.validate(encoder.num_patches());
        if (fusion == Fusion::blend) {
            fbm.validate();
            if (fbm.dim != encoder.dim) throw ConfigError("fbm.dim must equal encoder.dim");
        }
        if (!(objective.tau > 0)) throw ConfigError("objective.tau must be positive");
        if (objective.bank_momentum < 0 || objective.bank_momentum > 1) throw ConfigError("objective.bank_momentum outside [0, 1]");
        if (objective.roa_weight < 0) throw ConfigError("objective.roa_weight must be non-negative");
        if (train.ids_per_batch == 0 || train.imgs_per_id == 0) throw ConfigError("train batch extents must be positive");
        if (!(train.lr > 0)) throw ConfigError("train.lr must be positive");
        if (train.aug_prob < 0 || train.aug_prob > 1) throw ConfigError("train.aug_prob outside [0, 1]");
        if (train.hflip_prob < 0 || train.hflip_prob > 1) throw ConfigError("train.hflip_prob outside [0, 1]");
        roa.validate();
        if (data.source == "synthetic") {
            data.synth.validate();
            if (data.synth.image_h != encoder.image_h || data.synth.image_w != encoder.image_w) {
                throw ConfigError("data.synth image extents must match the encoder input");
            }
        }
    }

    /// Small CPU configuration used by the tests and the acceptance run.
    static RunConfig toy() { return {}; }

    /// Full-size settings: 256x128 input, ViT-B/16, k_min 48, P 4, 16x4 batches.
    static RunConfig paper_scale() {
        RunConfig c;
        c.encoder = EncoderConfig::paper_scale();
        c.selection.k_min = 48;
        c.fbm.dim = c.encoder.dim;
        c.fbm.sub_size = 48;
        c.train.epochs = 120;
        c.train.lr = 1e-4;
        c.train.ids_per_batch = 16;
        c.data.synth.image_h = c.encoder.image_h;
        c.data.synth.image_w = c.encoder.image_w;
        return c;
    }

    /// Fixed k = N with additive fusion.
    RunConfig as_baseline() const {
        RunConfig c = *this;
        c.selection.strategy = SelectionStrategy::fixed;
        c.selection.fixed_k = encoder.num_patches();
        c.fusion = Fusion::add;
        return c;
    }
};

NLOHMANN_JSON_SERIALIZE_ENUM(SelectionStrategy, {{SelectionStrategy::dynamic, "dynamic"},
                                                 {SelectionStrategy::fixed, "fixed"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ProxySource, {{ProxySource::closest_patch, "closest_patch"},
                                           {ProxySource::global_token, "global_token"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Fusion, {{Fusion::blend, "blend"}, {Fusion::add, "add"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Augmentation, {{Augmentation::none, "none"},
                                            {Augmentation::roa, "roa"},
                                            {Augmentation::random_erase, "random_erase"},
                                            {Augmentation::cut_paste, "cut_paste"}})

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            if constexpr (std::is_class_v<T> && !std::is_same_v<T, std::string>) {
                from_json(*it, field);  // nested section: overlay onto the current values
            } else {
                field = it->get<T>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config key '") + key + "': " + e.what());
        }
    }
}

template <typename E>
void read_enum(const nlohmann::json& j, const char* key, E& field) {
    if (auto it = j.find(key); it != j.end()) {
        E parsed = field;
        nlohmann::from_json(*it, parsed);
        // unknown strings map to the first enumerator; reject them explicitly
        if (nlohmann::json(parsed) != *it) throw ConfigError(std::string("config key '") + key + "': unknown value " + it->dump());
        field = parsed;
    }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"image_h", c.image_h}, {"image_w", c.image_w}, {"patch", c.patch},       {"dim", c.dim},
         {"depth", c.depth},     {"heads", c.heads},     {"mlp_ratio", c.mlp_ratio}, {"normalize_cls", c.normalize_cls},
         {"pixel_mean", c.pixel_mean}, {"pixel_std", c.pixel_std}};
}
inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
    detail::read_field(j, "image_h", c.image_h);
    detail::read_field(j, "image_w", c.image_w);
    detail::read_field(j, "patch", c.patch);
    detail::read_field(j, "dim", c.dim);
    detail::read_field(j, "depth", c.depth);
    detail::read_field(j, "heads", c.heads);
    detail::read_field(j, "mlp_ratio", c.mlp_ratio);
    detail::read_field(j, "normalize_cls", c.normalize_cls);
    detail::read_field(j, "pixel_mean", c.pixel_mean);
    detail::read_field(j, "pixel_std", c.pixel_std);
}

inline void to_json(nlohmann::json& j, const SelectionConfig& c) {
    j = {{"strategy", c.strategy}, {"fixed_k", c.fixed_k}, {"k_min", c.k_min},
         {"parts", c.parts},       {"proxy_source", c.proxy_source}};
}
inline void from_json(const nlohmann::json& j, SelectionConfig& c) {
    detail::read_enum(j, "strategy", c.strategy);
    detail::read_field(j, "fixed_k", c.fixed_k);
    detail::read_field(j, "k_min", c.k_min);
    detail::read_field(j, "parts", c.parts);
    detail::read_enum(j, "proxy_source", c.proxy_source);
}

inline void to_json(nlohmann::json& j, const FbmConfig& c) {
    j = {{"dim", c.dim},         {"sub_size", c.sub_size},
         {"heads", c.heads},     {"ffn_ratio", c.ffn_ratio},
         {"projection_bias", c.projection_bias}, {"output_bias", c.output_bias}};
}
inline void from_json(const nlohmann::json& j, FbmConfig& c) {
    detail::read_field(j, "dim", c.dim);
    detail::read_field(j, "sub_size", c.sub_size);
    detail::read_field(j, "heads", c.heads);
    detail::read_field(j, "ffn_ratio", c.ffn_ratio);
    detail::read_field(j, "projection_bias", c.projection_bias);
    detail::read_field(j, "output_bias", c.output_bias);
}

inline void to_json(nlohmann::json& j, const ObjectiveConfig& c) {
    j = {{"tau", c.tau},
         {"bank_momentum", c.bank_momentum},
         {"roa_weight", c.roa_weight},
         {"normalize_fq", c.normalize_fq},
         {"contrastive_after_fbm", c.contrastive_after_fbm},
         {"head_bn_momentum", c.head_bn_momentum}};
}
inline void from_json(const nlohmann::json& j, ObjectiveConfig& c) {
    detail::read_field(j, "tau", c.tau);
    detail::read_field(j, "bank_momentum", c.bank_momentum);
    detail::read_field(j, "roa_weight", c.roa_weight);
    detail::read_field(j, "normalize_fq", c.normalize_fq);
    detail::read_field(j, "contrastive_after_fbm", c.contrastive_after_fbm);
    detail::read_field(j, "head_bn_momentum", c.head_bn_momentum);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"ids_per_batch", c.ids_per_batch},
         {"imgs_per_id", c.imgs_per_id},
         {"epochs", c.epochs},
         {"max_steps", c.max_steps},
         {"lr", c.lr},
         {"weight_decay", c.weight_decay},
         {"augmentation", c.augmentation},
         {"aug_prob", c.aug_prob},
         {"hflip_prob", c.hflip_prob},
         {"pad_crop", c.pad_crop},
         {"mask_bank", c.mask_bank},
         {"synth_mask_count", c.synth_mask_count}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    detail::read_field(j, "ids_per_batch", c.ids_per_batch);
    detail::read_field(j, "imgs_per_id", c.imgs_per_id);
    detail::read_field(j, "epochs", c.epochs);
    detail::read_field(j, "max_steps", c.max_steps);
    detail::read_field(j, "lr", c.lr);
    detail::read_field(j, "weight_decay", c.weight_decay);
    detail::read_enum(j, "augmentation", c.augmentation);
    detail::read_field(j, "aug_prob", c.aug_prob);
    detail::read_field(j, "hflip_prob", c.hflip_prob);
    detail::read_field(j, "pad_crop", c.pad_crop);
    detail::read_field(j, "mask_bank", c.mask_bank);
    detail::read_field(j, "synth_mask_count", c.synth_mask_count);
}

inline void to_json(nlohmann::json& j, const RoaParams& c) {
    j = {{"area_lo", c.area_lo},       {"area_hi", c.area_hi},         {"aspect_threshold", c.aspect_threshold},
         {"flip_prob", c.flip_prob},   {"max_retries", c.max_retries}};
}
inline void from_json(const nlohmann::json& j, RoaParams& c) {
    detail::read_field(j, "area_lo", c.area_lo);
    detail::read_field(j, "area_hi", c.area_hi);
    detail::read_field(j, "aspect_threshold", c.aspect_threshold);
    detail::read_field(j, "flip_prob", c.flip_prob);
    detail::read_field(j, "max_retries", c.max_retries);
}

inline void to_json(nlohmann::json& j, const RandomEraseParams& c) {
    j = {{"probability", c.probability}, {"area_lo", c.area_lo},     {"area_hi", c.area_hi},
         {"aspect_lo", c.aspect_lo},     {"aspect_hi", c.aspect_hi}, {"max_attempts", c.max_attempts}};
}
inline void from_json(const nlohmann::json& j, RandomEraseParams& c) {
    detail::read_field(j, "probability", c.probability);
    detail::read_field(j, "area_lo", c.area_lo);
    detail::read_field(j, "area_hi", c.area_hi);
    detail::read_field(j, "aspect_lo", c.aspect_lo);
    detail::read_field(j, "aspect_hi", c.aspect_hi);
    detail::read_field(j, "max_attempts", c.max_attempts);
}

inline void to_json(nlohmann::json& j, const SynthOptions& c) {
    j = {{"num_ids", c.num_ids},
         {"imgs_per_id", c.imgs_per_id},
         {"cams", c.cams},
         {"queries_per_id", c.queries_per_id},
         {"gallery_per_id", c.gallery_per_id},
         {"image_h", c.image_h},
         {"image_w", c.image_w},
         {"signature_floor", c.signature_floor},
         {"occluder_count", c.occluder_count},
         {"occlude_queries", c.occlude_queries},
         {"query_occlusion", c.query_occlusion},
         {"camera_tint", c.camera_tint},
         {"background_saturation", c.background_saturation},
         {"background_contrast", c.background_contrast},
         {"noise", c.noise}};
}
inline void from_json(const nlohmann::json& j, SynthOptions& c) {
    detail::read_field(j, "num_ids", c.num_ids);
    detail::read_field(j, "imgs_per_id", c.imgs_per_id);
    detail::read_field(j, "cams", c.cams);
    detail::read_field(j, "queries_per_id", c.queries_per_id);
    detail::read_field(j, "gallery_per_id", c.gallery_per_id);
    detail::read_field(j, "image_h", c.image_h);
    detail::read_field(j, "image_w", c.image_w);
    detail::read_field(j, "signature_floor", c.signature_floor);
    detail::read_field(j, "occluder_count", c.occluder_count);
    detail::read_field(j, "occlude_queries", c.occlude_queries);
    detail::read_field(j, "query_occlusion", c.query_occlusion);
    detail::read_field(j, "camera_tint", c.camera_tint);
    detail::read_field(j, "background_saturation", c.background_saturation);
    detail::read_field(j, "background_contrast", c.background_contrast);
    detail::read_field(j, "noise", c.noise);
}

inline void to_json(nlohmann::json& j, const DataConfig& c) { j = {{"source", c.source}, {"synth", c.synth}}; }
inline void from_json(const nlohmann::json& j, DataConfig& c) {
    detail::read_field(j, "source", c.source);
    detail::read_field(j, "synth", c.synth);
}

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
    j = {{"use_pre_dpsm_features", c.use_pre_dpsm_features}, {"normalize", c.normalize}};
}
inline void from_json(const nlohmann::json& j, EvalConfig& c) {
    detail::read_field(j, "use_pre_dpsm_features", c.use_pre_dpsm_features);
    detail::read_field(j, "normalize", c.normalize);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"seed", c.seed},         {"encoder", c.encoder},   {"selection", c.selection}, {"fbm", c.fbm},
         {"fusion", c.fusion},     {"objective", c.objective}, {"train", c.train},       {"roa", c.roa},
         {"random_erase", c.random_erase}, {"data", c.data}, {"eval", c.eval}};
}
inline void from_json(const nlohmann::json& j, RunConfig& c) {
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "encoder", c.encoder);
    detail::read_field(j, "selection", c.selection);
    detail::read_field(j, "fbm", c.fbm);
    detail::read_enum(j, "fusion", c.fusion);
    detail::read_field(j, "objective", c.objective);
    detail::read_field(j, "train", c.train);
    detail::read_field(j, "roa", c.roa);
    detail::read_field(j, "random_erase", c.random_erase);
    detail::read_field(j, "data", c.data);
    detail::read_field(j, "eval", c.eval);
}

namespace detail {
/// Every key in `given` must exist in `known`, recursively.
inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
    if (!given.is_object()) return;
    if (!known.is_object()) throw ConfigError("config key '" + path + "' is not an object");
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        auto k = known.find(it.key());
        if (k == known.end()) throw ConfigError("unknown config key '" + key + "'");
        if (it->is_object()) reject_unknown_keys(*it, *k, key);
    }
}
}  // namespace detail

/// Overlays `j` on `base`. Unknown keys and malformed values raise ConfigError.
inline RunConfig merge_config(const RunConfig& base, const nlohmann::json& j) {
    detail::reject_unknown_keys(j, nlohmann::json(base), "");
    RunConfig c = base;
    from_json(j, c);
    return c;
}

inline RunConfig load_config(const std::string& path, const RunConfig& base = RunConfig::toy()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return merge_config(base, j);
}

/// Applies a dotted override such as "train.lr=0.002"; the value is parsed
/// as JSON, falling back to a plain string.
inline RunConfig apply_override(const RunConfig& base, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    nlohmann::json patch = nlohmann::json::object();
    nlohmann::json* cur = &patch;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (dot == std::string::npos) {
            (*cur)[part] = value;
            break;
        }
        cur = &(*cur)[part];
        start = dot + 1;
    }
    return merge_config(base, patch);
}

}  // namespace dpef
