// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "dpef/errors.hpp"
#include "dpef/image.hpp"
#include "dpef/png_io.hpp"
#include "dpef/rng.hpp"

namespace dpef {

/// One occluder cropped to the tight bounding box of its coverage.
struct MaskEntry {
    Image texture;
    Mask coverage;
    std::size_t mask_h = 0;
    std::size_t mask_w = 0;
    std::string source;

    bool tall(double threshold = 2.0) const { return double(mask_h) / double(mask_w) > threshold; }
};

using WarningSink = std::function<void(const std::string&)>;

inline void warn_to_stderr(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

/// Crops texture and coverage to the coverage's tight bounding box.
/// Returns false when no pixel is covered.
inline bool crop_to_coverage(const Image& texture, const Mask& coverage, MaskEntry& out) {
    std::size_t y0 = coverage.height, y1 = 0, x0 = coverage.width, x1 = 0;
    for (std::size_t y = 0; y < coverage.height; ++y)
        for (std::size_t x = 0; x < coverage.width; ++x)
            if (coverage.at(y, x)) {
                y0 = std::min(y0, y), y1 = std::max(y1, y);
                x0 = std::min(x0, x), x1 = std::max(x1, x);
            }
    if (y0 > y1 || x0 > x1) return false;
    const std::size_t h = y1 - y0 + 1, w = x1 - x0 + 1;
    out.texture = Image(texture.channels, h, w);
    out.coverage = Mask(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            out.coverage.set(y, x, coverage.at(y0 + y, x0 + x));
            for (std::size_t c = 0; c < texture.channels; ++c) out.texture.at(c, y, x) = texture.at(c, y0 + y, x0 + x);
        }
    out.mask_h = h;
    out.mask_w = w;
    return true;
}

/// Reads every *.png under `dir` (sorted by name); alpha > 0 marks coverage.
inline std::vector<MaskEntry> load_mask_bank(const std::filesystem::path& dir,
                                             const WarningSink& warn = warn_to_stderr) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("mask bank: not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<MaskEntry> bank;
    for (const auto& f : files) {
        RgbaImage img;
        try {
            img = read_png(f);
        } catch (const Error& e) {
            warn("skipping " + f.string() + ": " + e.what());
            continue;
        }
        if (!img.alpha) {
            warn("skipping " + f.string() + ": no alpha channel");
            continue;
        }
        MaskEntry m;
        if (!crop_to_coverage(img.rgb, *img.alpha, m)) {
            warn("skipping " + f.string() + ": fully transparent");
            continue;
        }
        m.source = f.filename().string();
        bank.push_back(std::move(m));
    }
    if (bank.empty()) throw ConfigError("mask bank at " + dir.string() + " has no usable masks");
    return bank;
}

/// Writes a bank back out as RGBA PNGs (coverage in alpha).
inline void save_mask_bank(const std::vector<MaskEntry>& bank, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "mask_%05zu.png", i);
        write_png(dir / name, bank[i].texture, &bank[i].coverage);
    }
}

namespace detail {

inline bool point_in_polygon(double px, double py, const std::vector<std::array<double, 2>>& poly) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a[1] > py) != (b[1] > py) && px < (b[0] - a[0]) * (py - a[1]) / (b[1] - a[1]) + a[0]) inside = !inside;
    }
    return inside;
}

inline MaskEntry synth_one(Rng& rng, bool force_tall) {
    for (;;) {
        std::size_t h, w;
        if (force_tall) {
            w = 6 + uniform_index(rng, 10);
            h = std::size_t(double(w) * uniform(rng, 2.6, 5.0));
        } else {
            h = 12 + uniform_index(rng, 36);
            w = 12 + uniform_index(rng, 36);
        }
        Mask cov(h, w);
        const std::size_t kind = uniform_index(rng, 3);
        if (kind == 0) {  // ellipse blob with a wobbly rim
            const double f1 = uniform(rng, 0, 2 * std::numbers::pi), f2 = uniform(rng, 0, 2 * std::numbers::pi);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    double u = (x + 0.5) / w * 2 - 1, v = (y + 0.5) / h * 2 - 1;
                    double ang = std::atan2(v, u);
                    double r = 0.85 + 0.12 * std::sin(3 * ang + f1) + 0.05 * std::sin(5 * ang + f2);
                    cov.set(y, x, u * u + v * v <= r * r);
                }
        } else if (kind == 1) {  // random star-shaped polygon
            const std::size_t k = 5 + uniform_index(rng, 6);
            std::vector<std::array<double, 2>> poly;
            for (std::size_t i = 0; i < k; ++i) {
                double ang = 2 * std::numbers::pi * (i + uniform(rng, 0, 0.6)) / k;
                double r = uniform(rng, 0.5, 1.0);
                poly.push_back({0.5 * w * (1 + r * std::cos(ang)), 0.5 * h * (1 + r * std::sin(ang))});
            }
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) cov.set(y, x, point_in_polygon(x + 0.5, y + 0.5, poly));
        } else {  // rounded box with a notch
            const std::size_t ny = uniform_index(rng, h / 2), nx = uniform_index(rng, w / 2);
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) cov.set(y, x, !(y < ny && x < nx));
        }

        Image tex(3, h, w);
        const float base[3] = {float(uniform(rng, 0, 1)), float(uniform(rng, 0, 1)), float(uniform(rng, 0, 1))};
        const float alt[3] = {float(uniform(rng, 0, 1)), float(uniform(rng, 0, 1)), float(uniform(rng, 0, 1))};
        const double period = uniform(rng, 3, 10), tilt = uniform(rng, -1, 1);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const bool stripe = std::fmod(std::abs(y + tilt * x), period) < period / 2;
                const float noise = float(uniform(rng, -0.08, 0.08));
                for (std::size_t c = 0; c < 3; ++c)
                    tex.at(c, y, x) = std::clamp((stripe ? base[c] : alt[c]) + noise, 0.f, 1.f);
            }

        MaskEntry m;
        if (!crop_to_coverage(tex, cov, m)) continue;
        if (force_tall && !m.tall()) continue;
        return m;
    }
}

}  // namespace detail

/// Procedural occluders (blobs, polygons, notched boxes) with striped
/// textures. Every fourth entry is tall (h/w > 2).
inline std::vector<MaskEntry> synth_masks(std::uint64_t seed, std::size_t count) {
    if (count == 0) throw ConfigError("synth_masks: count must be >= 1");
    std::vector<MaskEntry> bank;
    bank.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = make_rng(seed, {0x5a11, i});
        bank.push_back(detail::synth_one(rng, i % 4 == 0));
        bank.back().source = "synthetic:" + std::to_string(i);
    }
    return bank;
}

struct RoaParams {
    double area_lo = 0.5;
    double area_hi = 0.75;
    double aspect_threshold = 2.0;
    double flip_prob = 0.5;
    std::size_t max_retries = 5;

    void validate() const {
        if (!(area_lo > 0 && area_lo < area_hi && area_hi <= 1)) throw ConfigError("roa: need 0 < area_lo < area_hi <= 1");
        if (flip_prob < 0 || flip_prob > 1) throw ConfigError("roa: flip_prob outside [0, 1]");
    }
};

enum class Anchor : std::size_t { top_left = 0, bottom_left = 1, top_right = 2 };

/// Size, orientation and placement drawn for one occlusion.
struct OcclusionPlan {
    bool valid = false;
    std::size_t mask_index = 0;
    double random_area = 0;
    bool tall = false;
    bool flipped = false;
    Anchor anchor = Anchor::top_left;
    Box box;
};

/// The draw shared by roa and cut_paste: mask, area, branch, flip, corner.
inline OcclusionPlan plan_occlusion(std::size_t image_h, std::size_t image_w, const std::vector<MaskEntry>& bank,
                                    const RoaParams& params, Rng& rng, const WarningSink& warn = warn_to_stderr) {
    if (bank.empty()) throw ConfigError("roa: empty mask bank");
    params.validate();
    const double area = double(image_h) * double(image_w);
    for (std::size_t attempt = 0; attempt <= params.max_retries; ++attempt) {
        OcclusionPlan p;
        p.mask_index = uniform_index(rng, bank.size());
        p.random_area = uniform(rng, params.area_lo * area, params.area_hi * area);
        const MaskEntry& m = bank[p.mask_index];
        p.tall = double(m.mask_h) / double(m.mask_w) > params.aspect_threshold;
        std::size_t rh, rw;
        if (p.tall) {
            rh = image_h;
            rw = static_cast<std::size_t>(p.random_area / double(image_h));
        } else {
            rh = static_cast<std::size_t>(p.random_area / double(image_w));
            rw = image_w;
        }
        p.flipped = bernoulli(rng, params.flip_prob);
        p.anchor = static_cast<Anchor>(uniform_index(rng, 3));
        if (rh == 0 || rw == 0 || rh > image_h || rw > image_w) continue;
        switch (p.anchor) {
            case Anchor::top_left: p.box = {0, 0, rw, rh}; break;
            case Anchor::bottom_left: p.box = {0, image_h - rh, rw, rh}; break;
            case Anchor::top_right: p.box = {image_w - rw, 0, rw, rh}; break;
        }
        p.valid = true;
        return p;
    }
    warn("roa: degenerate occluder extent after " + std::to_string(params.max_retries) +
         " retries; image passed through");
    return {};
}

struct OcclusionResult {
    Image image;
    Mask occlusion;  // true where pixels were replaced
    OcclusionPlan plan;
};

namespace detail {
inline OcclusionResult paste(const Image& image, const std::vector<MaskEntry>& bank, const OcclusionPlan& plan,
                             bool use_coverage) {
    OcclusionResult out{image, Mask(image.height, image.width), plan};
    if (!plan.valid) return out;
    const MaskEntry& m = bank[plan.mask_index];
    Image tex = resize_bilinear(m.texture, plan.box.h, plan.box.w);
    Mask cov = resize_nearest(m.coverage, plan.box.h, plan.box.w);
    if (plan.flipped) {
        tex = flip_horizontal(tex);
        cov = flip_horizontal(cov);
    }
    for (std::size_t y = 0; y < plan.box.h; ++y)
        for (std::size_t x = 0; x < plan.box.w; ++x) {
            if (use_coverage && !cov.at(y, x)) continue;
            const std::size_t iy = plan.box.y + y, ix = plan.box.x + x;
            for (std::size_t c = 0; c < image.channels; ++c) out.image.at(c, iy, ix) = tex.at(c % tex.channels, y, x);
            out.occlusion.set(iy, ix, true);
        }
    return out;
}
}  // namespace detail

/// Realistic occlusion: a bank mask resized to cover half to three quarters of
/// the image, optionally flipped, anchored at a corner, composited through its
/// coverage.
inline OcclusionResult roa(const Image& image, const std::vector<MaskEntry>& bank, const RoaParams& params, Rng& rng,
                           const WarningSink& warn = warn_to_stderr) {
    return detail::paste(image, bank, plan_occlusion(image.height, image.width, bank, params, rng, warn), true);
}

/// Same draw as roa, but the whole resized rectangle is pasted.
inline OcclusionResult cut_paste(const Image& image, const std::vector<MaskEntry>& bank, const RoaParams& params,
                                 Rng& rng, const WarningSink& warn = warn_to_stderr) {
    return detail::paste(image, bank, plan_occlusion(image.height, image.width, bank, params, rng, warn), false);
}

struct RandomEraseParams {
    double probability = 0.5;
    double area_lo = 0.02;
    double area_hi = 0.4;
    double aspect_lo = 0.3;
    double aspect_hi = 1.0 / 0.3;
    std::size_t max_attempts = 100;
};

struct EraseResult {
    Image image;
    bool applied = false;
    Box box;
};

/// Random erasing: a rectangle of random area and aspect filled with uniform noise.
inline EraseResult random_erase(const Image& image, Rng& rng, const RandomEraseParams& params = {}) {
    EraseResult out{image, false, {}};
    if (!bernoulli(rng, params.probability)) return out;
    const double area = double(image.height) * double(image.width);
    for (std::size_t attempt = 0; attempt < params.max_attempts; ++attempt) {
        const double target = uniform(rng, params.area_lo, params.area_hi) * area;
        const double aspect = std::exp(uniform(rng, std::log(params.aspect_lo), std::log(params.aspect_hi)));
        const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
        const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
        if (h == 0 || w == 0 || h >= image.height || w >= image.width) continue;
        const std::size_t y0 = uniform_index(rng, image.height - h + 1), x0 = uniform_index(rng, image.width - w + 1);
        for (std::size_t c = 0; c < image.channels; ++c)
            for (std::size_t y = y0; y < y0 + h; ++y)
                for (std::size_t x = x0; x < x0 + w; ++x) out.image.at(c, y, x) = float(uniform(rng, 0, 1));
        out.applied = true;
        out.box = {x0, y0, w, h};
        return out;
    }
    return out;
}

}  // namespace dpef
