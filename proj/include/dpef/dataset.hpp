// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <functional>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "dpef/augment.hpp"
#include "dpef/errors.hpp"
#include "dpef/image.hpp"
#include "dpef/png_io.hpp"
#include "dpef/rng.hpp"

namespace dpef {

struct IdentitySample {
    Image image;
    std::size_t identity = 0;
    std::size_t camera = 0;
    bool roa_flag = false;
    std::optional<Mask> body;  // visible body pixels (synthetic data only)
    std::string name;
};

struct Dataset {
    std::vector<IdentitySample> train;
    std::vector<IdentitySample> query;
    std::vector<IdentitySample> gallery;
    std::size_t num_ids = 0;  // classes seen in training
};

struct SynthOptions {
    std::size_t num_ids = 20;
    std::size_t imgs_per_id = 8;
    std::size_t cams = 3;
    std::size_t queries_per_id = 2;
    std::size_t gallery_per_id = 2;
    std::size_t image_h = 64;
    std::size_t image_w = 32;
    double signature_floor = 0.35;   // min pairwise distance of identity colors
    std::size_t occluder_count = 200;
    bool occlude_queries = true;
    RoaParams query_occlusion{0.3, 0.5};
    double camera_tint = 0.1;  // per-channel gain drawn from 1 +- camera_tint
    double background_saturation = 0.06;
    double background_contrast = 0.15;
    double noise = 0.03;

    void validate() const {
        if (num_ids < 2) throw ConfigError("synth_dataset: need at least 2 identities");
        if (cams < 2) throw ConfigError("synth_dataset: need at least 2 cameras");
        if (queries_per_id == 0 || gallery_per_id == 0) throw ConfigError("synth_dataset: need a query and a gallery image per identity");
        if ((queries_per_id - 1) * cams >= imgs_per_id) throw ConfigError("synth_dataset: not enough camera-0 images for the queries");
        if (queries_per_id + gallery_per_id >= imgs_per_id) throw ConfigError("synth_dataset: no images left for training");
        if (image_h < 16 || image_w < 8) throw ConfigError("synth_dataset: image too small");
    }
};

/// Stable appearance of one synthetic person.
struct PersonSignature {
    std::array<float, 3> torso{}, legs{}, hair{}, skin{}, accent{};
    std::size_t pattern = 0;  // 0 solid, 1 horizontal stripes, 2 vertical stripes, 3 checker
    double width = 0.45;      // torso width as a fraction of image width

    std::array<float, 6> key() const { return {torso[0], torso[1], torso[2], legs[0], legs[1], legs[2]}; }
};

namespace detail {

inline std::array<float, 3> random_color(Rng& rng, double lo = 0.05, double hi = 0.95) {
    return {float(uniform(rng, lo, hi)), float(uniform(rng, lo, hi)), float(uniform(rng, lo, hi))};
}

inline double signature_distance(const PersonSignature& a, const PersonSignature& b) {
    double s = 0;
    auto ka = a.key(), kb = b.key();
    for (std::size_t i = 0; i < ka.size(); ++i) s += double(ka[i] - kb[i]) * double(ka[i] - kb[i]);
    return std::sqrt(s);
}

inline std::vector<PersonSignature> make_signatures(std::uint64_t seed, const SynthOptions& opt) {
    std::vector<PersonSignature> out;
    Rng rng = make_rng(seed, {0x51C});
    std::size_t attempts = 0;
    while (out.size() < opt.num_ids) {
        if (++attempts > 100000) throw ConfigError("synth_dataset: cannot place identities above the distance floor");
        PersonSignature s;
        s.torso = random_color(rng);
        s.legs = random_color(rng);
        s.hair = random_color(rng, 0.02, 0.6);
        const float tone = float(uniform(rng, 0.45, 0.9));
        s.skin = {tone, tone * 0.8f, tone * 0.65f};
        s.accent = random_color(rng);
        s.pattern = uniform_index(rng, 4);
        s.width = uniform(rng, 0.46, 0.6);
        bool ok = true;
        for (const auto& o : out) ok &= signature_distance(s, o) >= opt.signature_floor;
        if (ok) out.push_back(s);
    }
    return out;
}

inline void paint(Image& im, Mask* body, std::size_t y, std::size_t x, const std::array<float, 3>& c) {
    for (std::size_t ch = 0; ch < 3; ++ch) im.at(ch, y, x) = c[ch];
    if (body) body->set(y, x, true);
}

inline void fill_rect(Image& im, Mask* body, double x0, double y0, double x1, double y1,
                      const std::function<std::array<float, 3>(std::size_t, std::size_t)>& color) {
    const auto ya = std::size_t(std::clamp(std::lround(y0), 0L, long(im.height)));
    const auto yb = std::size_t(std::clamp(std::lround(y1), 0L, long(im.height)));
    const auto xa = std::size_t(std::clamp(std::lround(x0), 0L, long(im.width)));
    const auto xb = std::size_t(std::clamp(std::lround(x1), 0L, long(im.width)));
    for (std::size_t y = ya; y < yb; ++y)
        for (std::size_t x = xa; x < xb; ++x) paint(im, body, y, x, color(y, x));
}

/// Muted scene: a gray-ish vertical gradient with low-contrast clutter.
inline void background(Image& im, Rng& rng, double saturation, double contrast) {
    auto muted = [&](double level) {
        std::array<float, 3> c{};
        for (auto& v : c) v = float(std::clamp(level + uniform(rng, -saturation, saturation), 0.0, 1.0));
        return c;
    };
    const double base = uniform(rng, 0.3, 0.7);
    const auto top = muted(base + uniform(rng, -0.1, 0.1)), bottom = muted(base + uniform(rng, -0.1, 0.1));
    for (std::size_t y = 0; y < im.height; ++y) {
        const float t = float(y) / float(im.height - 1);
        for (std::size_t x = 0; x < im.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) im.at(c, y, x) = top[c] * (1 - t) + bottom[c] * t;
    }
    const std::size_t clutter = 4 + uniform_index(rng, 5);
    for (std::size_t i = 0; i < clutter; ++i) {
        const auto col = muted(base + uniform(rng, -contrast, contrast));
        const double w = uniform(rng, 0.1, 0.6) * im.width, h = uniform(rng, 0.05, 0.4) * im.height;
        const double x = uniform(rng, -0.2, 1.0) * im.width, y = uniform(rng, -0.1, 1.0) * im.height;
        fill_rect(im, nullptr, x, y, x + w, y + h, [&](std::size_t, std::size_t) { return col; });
    }
}

/// Draws the person over the current image content and records body pixels.
inline void render_person(Image& im, Mask& body, const PersonSignature& s, Rng& rng) {
    const double H = double(im.height), W = double(im.width);
    const double scale = uniform(rng, 0.92, 1.04);
    const double cx = W / 2 + uniform(rng, -0.07, 0.07) * W;
    const double top = uniform(rng, 0.0, 0.05) * H;
    const double tw = s.width * W * scale;
    const double torso_top = top + 0.17 * H * scale, torso_bot = top + 0.53 * H * scale;
    const double leg_bot = std::min(H, top + 0.97 * H * scale);
    const float shade = float(uniform(rng, 0.85, 1.0));
    auto dim = [&](std::array<float, 3> c, float f) { return std::array<float, 3>{c[0] * f, c[1] * f, c[2] * f}; };

    // legs
    const double gap = uniform(rng, 0.0, 0.12) * tw, lw = (tw - gap) / 2 * 0.92;
    const auto leg = dim(s.legs, shade);
    fill_rect(im, &body, cx - gap / 2 - lw, torso_bot, cx - gap / 2, leg_bot, [&](auto, auto) { return leg; });
    fill_rect(im, &body, cx + gap / 2, torso_bot, cx + gap / 2 + lw, leg_bot, [&](auto, auto) { return leg; });
    const auto shoe = dim(s.legs, 0.35f);
    fill_rect(im, &body, cx - gap / 2 - lw, leg_bot - 0.04 * H, cx - gap / 2, leg_bot, [&](auto, auto) { return shoe; });
    fill_rect(im, &body, cx + gap / 2, leg_bot - 0.04 * H, cx + gap / 2 + lw, leg_bot, [&](auto, auto) { return shoe; });

    // arms
    const double aw = 0.1 * W, arm_bot = top + uniform(rng, 0.45, 0.55) * H * scale;
    const auto arm = dim(s.torso, 0.8f * shade);
    fill_rect(im, &body, cx - tw / 2 - aw, torso_top + 0.01 * H, cx - tw / 2, arm_bot, [&](auto, auto) { return arm; });
    fill_rect(im, &body, cx + tw / 2, torso_top + 0.01 * H, cx + tw / 2 + aw, arm_bot, [&](auto, auto) { return arm; });

    // torso with pattern
    const double period = std::max(2.0, 0.1 * H);
    auto torso_color = [&](std::size_t y, std::size_t x) {
        bool alt = false;
        switch (s.pattern) {
            case 1: alt = std::fmod(y - torso_top, period) < period / 2; break;
            case 2: alt = std::fmod(x - (cx - tw / 2), period) < period / 2; break;
            case 3: alt = (std::fmod(y - torso_top, period) < period / 2) != (std::fmod(x - (cx - tw / 2), period) < period / 2); break;
            default: break;
        }
        return dim(alt ? s.accent : s.torso, shade);
    };
    fill_rect(im, &body, cx - tw / 2, torso_top, cx + tw / 2, torso_bot, torso_color);

    // head: hair on the upper half, skin below
    const double hr = 0.075 * H * scale, hy = top + 0.09 * H * scale;
    for (std::size_t y = 0; y < im.height; ++y)
        for (std::size_t x = 0; x < im.width; ++x) {
            const double dx = (x + 0.5 - cx) / (hr * 0.8), dy = (y + 0.5 - hy) / hr;
            if (dx * dx + dy * dy <= 1.0) paint(im, &body, y, x, y + 0.5 < hy ? s.hair : dim(s.skin, shade));
        }
}

inline std::array<float, 3> camera_tint(std::uint64_t seed, std::size_t cam, double spread) {
    Rng rng = make_rng(seed, {0xCA, cam});
    std::array<float, 3> g{};
    for (auto& v : g) v = float(uniform(rng, 1 - spread, 1 + spread));
    return g;
}

}  // namespace detail

/// Identity signatures the generator uses for `seed` (exposed for tests).
inline std::vector<PersonSignature> synth_signatures(std::uint64_t seed, const SynthOptions& opt = {}) {
    opt.validate();
    return detail::make_signatures(seed, opt);
}

/// Renders one image of identity `id`, image index `idx`, seen by `cam`.
inline IdentitySample synth_sample(std::uint64_t seed, const SynthOptions& opt, const PersonSignature& sig,
                                   std::size_t id, std::size_t idx, std::size_t cam) {
    Rng rng = make_rng(seed, {0x1A6E, id, idx});
    IdentitySample s;
    s.identity = id;
    s.camera = cam;
    s.name = std::to_string(id) + "_" + std::to_string(cam) + "_" + std::to_string(idx);
    s.image = Image(3, opt.image_h, opt.image_w);
    Mask body(opt.image_h, opt.image_w);
    detail::background(s.image, rng, opt.background_saturation, opt.background_contrast);
    detail::render_person(s.image, body, sig, rng);
    const auto tint = detail::camera_tint(seed, cam, opt.camera_tint);
    std::normal_distribution<double> noise(0.0, opt.noise);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < opt.image_h; ++y)
            for (std::size_t x = 0; x < opt.image_w; ++x) {
                float& v = s.image.at(c, y, x);
                v = std::clamp(float(v * tint[c] + noise(rng)), 0.f, 1.f);
            }
    s.body = std::move(body);
    return s;
}

/// Procedural re-identification benchmark. Camera = idx % cams. Per
/// identity the first `queries_per_id` camera-0 images become occluded
/// queries, the first `gallery_per_id` images from other cameras become
/// gallery, and the rest are training images.
inline Dataset synth_dataset(std::uint64_t seed, const SynthOptions& opt = {}) {
    opt.validate();
    const auto sigs = detail::make_signatures(seed, opt);
    const auto occluders = synth_masks(seed ^ 0x0CC1D3ULL, opt.occluder_count);
    Dataset ds;
    ds.num_ids = opt.num_ids;
    for (std::size_t id = 0; id < opt.num_ids; ++id) {
        std::size_t gallery_taken = 0;
        for (std::size_t idx = 0; idx < opt.imgs_per_id; ++idx) {
            const std::size_t cam = idx % opt.cams;
            auto s = synth_sample(seed, opt, sigs[id], id, idx, cam);
            const bool is_query = cam == 0 && idx / opt.cams < opt.queries_per_id;
            const bool is_gallery = cam != 0 && gallery_taken < opt.gallery_per_id;
            gallery_taken += is_gallery;
            if (is_query && opt.occlude_queries) {
                Rng orng = make_rng(seed, {0x0CC, id, idx});
                auto occ = roa(s.image, occluders, opt.query_occlusion, orng);
                s.image = std::move(occ.image);
                for (std::size_t i = 0; i < s.body->data.size(); ++i)
                    if (occ.occlusion.data[i]) s.body->data[i] = 0;
                ds.query.push_back(std::move(s));
            } else if (is_query) {
                ds.query.push_back(std::move(s));
            } else if (is_gallery) {
                ds.gallery.push_back(std::move(s));
            } else {
                ds.train.push_back(std::move(s));
            }
        }
    }
    return ds;
}

/// Loads `<id>_<cam>_<idx>.png` files from train/, query/ and gallery/ under
/// `root`, resized to the given extents. Raw ids are relabeled densely with
/// training identities first.
inline Dataset load_folder_dataset(const std::filesystem::path& root, std::size_t image_h, std::size_t image_w) {
    static const std::regex pattern(R"(^(-?\d+)_(\d+)_(\d+)\.png$)");
    struct Raw {
        std::string id;
        std::size_t cam;
        std::filesystem::path path;
    };
    auto scan = [&](const std::string& sub) {
        std::vector<Raw> out;
        const auto dir = root / sub;
        if (!std::filesystem::is_directory(dir)) return out;
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            std::smatch m;
            const std::string fname = e.path().filename().string();
            if (!std::regex_match(fname, m, pattern)) continue;
            out.push_back({m[1].str(), std::size_t(std::stoul(m[2].str())), e.path()});
        }
        std::sort(out.begin(), out.end(), [](const Raw& a, const Raw& b) { return a.path < b.path; });
        return out;
    };
    auto train = scan("train"), query = scan("query"), gallery = scan("gallery");
    if (train.empty() && query.empty()) throw DataError("no <id>_<cam>_<idx>.png files under " + root.string());

    std::map<std::string, std::size_t> label;
    auto assign = [&](const std::vector<Raw>& list) {
        std::vector<std::string> ids;
        for (const auto& r : list) ids.push_back(r.id);
        std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
            return std::stoll(a) < std::stoll(b);
        });
        for (const auto& id : ids) label.emplace(id, label.size());
    };
    assign(train);
    Dataset ds;
    ds.num_ids = label.size();
    assign(query);
    assign(gallery);

    auto load = [&](const std::vector<Raw>& list, std::vector<IdentitySample>& out) {
        for (const auto& r : list) {
            IdentitySample s;
            auto img = read_png(r.path).rgb;
            s.image = (img.height == image_h && img.width == image_w) ? img : resize_bilinear(img, image_h, image_w);
            s.identity = label.at(r.id);
            s.camera = r.cam;
            s.name = r.path.stem().string();
            out.push_back(std::move(s));
        }
    };
    load(train, ds.train);
    load(query, ds.query);
    load(gallery, ds.gallery);
    return ds;
}

/// K_id distinct identities with K_img images each; identities with fewer
/// images are sampled with replacement. Returns indices into `samples`.
inline std::vector<std::size_t> pk_sample(const std::vector<IdentitySample>& samples, std::size_t k_id,
                                          std::size_t k_img, Rng& rng) {
    if (k_id == 0 || k_img == 0) throw ConfigError("pk_sample: K_id and K_img must be positive");
    std::map<std::size_t, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < samples.size(); ++i) by_id[samples[i].identity].push_back(i);
    if (by_id.size() < k_id) {
        throw ConfigError("pk_sample: " + std::to_string(by_id.size()) + " identities available, " +
                          std::to_string(k_id) + " requested");
    }
    std::vector<std::size_t> ids;
    for (const auto& [id, _] : by_id) ids.push_back(id);
    // partial Fisher-Yates for K_id distinct identities
    for (std::size_t i = 0; i < k_id; ++i) std::swap(ids[i], ids[i + uniform_index(rng, ids.size() - i)]);
    std::vector<std::size_t> batch;
    batch.reserve(k_id * k_img);
    for (std::size_t i = 0; i < k_id; ++i) {
        auto pool = by_id[ids[i]];
        if (pool.size() >= k_img) {
            for (std::size_t j = 0; j < k_img; ++j) {
                std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
                batch.push_back(pool[j]);
            }
        } else {
            for (std::size_t j = 0; j < k_img; ++j) batch.push_back(pool[uniform_index(rng, pool.size())]);
        }
    }
    return batch;
}

}  // namespace dpef
