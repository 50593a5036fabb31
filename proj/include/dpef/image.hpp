// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dpef/errors.hpp"

namespace dpef {

/// Planar (channel-major) float image with values in [0, 1].
struct Image {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.f)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
    std::size_t area() const { return height * width; }
    bool empty() const { return data.empty(); }
    bool operator==(const Image&) const = default;
};

/// Boolean per-pixel map (true = covered).
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, bool fill = false) : height(h), width(w), data(h * w, fill ? 1 : 0) {}

    bool at(std::size_t y, std::size_t x) const { return data[y * width + x] != 0; }
    void set(std::size_t y, std::size_t x, bool v) { data[y * width + x] = v ? 1 : 0; }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
    }
    bool operator==(const Mask&) const = default;
};

/// Inclusive-exclusive pixel rectangle.
struct Box {
    std::size_t x = 0, y = 0, w = 0, h = 0;
    bool operator==(const Box&) const = default;
};

inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw DimensionError("resize_bilinear: zero target extent");
    Image dst(src.channels, out_h, out_w);
    const double sy = double(src.height) / double(out_h);
    const double sx = double(src.width) / double(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
        auto y0 = static_cast<std::size_t>(fy);
        std::size_t y1 = std::min(y0 + 1, src.height - 1);
        double wy = fy - double(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
            auto x0 = static_cast<std::size_t>(fx);
            std::size_t x1 = std::min(x0 + 1, src.width - 1);
            double wx = fx - double(x0);
            for (std::size_t c = 0; c < src.channels; ++c) {
                double top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
                double bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
                dst.at(c, y, x) = float(top * (1 - wy) + bot * wy);
            }
        }
    }
    return dst;
}

inline Mask resize_nearest(const Mask& src, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw DimensionError("resize_nearest: zero target extent");
    Mask dst(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t sy = std::min(src.height - 1, (y * src.height) / out_h);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t sx = std::min(src.width - 1, (x * src.width) / out_w);
            dst.set(y, x, src.at(sy, sx));
        }
    }
    return dst;
}

inline Image flip_horizontal(const Image& src) {
    Image dst = src;
    for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t y = 0; y < src.height; ++y)
            for (std::size_t x = 0; x < src.width; ++x) dst.at(c, y, x) = src.at(c, y, src.width - 1 - x);
    return dst;
}

inline Mask flip_horizontal(const Mask& src) {
    Mask dst = src;
    for (std::size_t y = 0; y < src.height; ++y)
        for (std::size_t x = 0; x < src.width; ++x) dst.set(y, x, src.at(y, src.width - 1 - x));
    return dst;
}

/// Shifts content by (dx, dy); uncovered pixels take `fill`. Equivalent to
/// zero-padding then cropping back to the original extent.
inline Image translate(const Image& src, long dx, long dy, float fill = 0.f) {
    Image dst(src.channels, src.height, src.width, fill);
    for (std::size_t c = 0; c < src.channels; ++c)
        for (std::size_t y = 0; y < src.height; ++y) {
            const long sy = long(y) - dy;
            if (sy < 0 || sy >= long(src.height)) continue;
            for (std::size_t x = 0; x < src.width; ++x) {
                const long sx = long(x) - dx;
                if (sx >= 0 && sx < long(src.width)) dst.at(c, y, x) = src.at(c, std::size_t(sy), std::size_t(sx));
            }
        }
    return dst;
}

/// Side-by-side concatenation of equal-height images.
inline Image hstack(const std::vector<Image>& images) {
    if (images.empty()) return {};
    std::size_t h = images.front().height, w = 0, c = images.front().channels;
    for (const auto& im : images) {
        if (im.height != h || im.channels != c) throw DimensionError("hstack: extents differ");
        w += im.width;
    }
    Image out(c, h, w);
    std::size_t off = 0;
    for (const auto& im : images) {
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < im.width; ++x) out.at(ch, y, off + x) = im.at(ch, y, x);
        off += im.width;
    }
    return out;
}

}  // namespace dpef
