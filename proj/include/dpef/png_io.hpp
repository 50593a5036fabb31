// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dpef/errors.hpp"
#include "dpef/image.hpp"

namespace dpef {

struct RgbaImage {
    Image rgb;
    std::optional<Mask> alpha;  // alpha > 0, when the file carries an alpha channel
};

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

/// Decodes any PNG into float RGB; alpha is kept as a coverage mask.
inline RgbaImage read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw DataError("not a PNG: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng init failed");
    }
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    const bool has_trns = png_get_valid(png, info, PNG_INFO_tRNS);
    if (has_trns) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    const bool has_alpha = has_trns || (color & PNG_COLOR_MASK_ALPHA);
    if (!has_alpha) png_set_filler(png, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(png, info);

    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    buffer.resize(w * h * 4);
    rows.resize(h);
    for (std::size_t y = 0; y < h; ++y) rows[y] = buffer.data() + y * w * 4;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    RgbaImage out;
    out.rgb = Image(3, h, w);
    if (has_alpha) out.alpha = Mask(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const unsigned char* px = buffer.data() + (y * w + x) * 4;
            for (std::size_t c = 0; c < 3; ++c) out.rgb.at(c, y, x) = px[c] / 255.f;
            if (has_alpha) out.alpha->set(y, x, px[3] > 0);
        }
    return out;
}

/// Writes RGB, or RGBA when `alpha` is given (covered pixels opaque).
inline void write_png(const std::filesystem::path& path, const Image& image, const Mask* alpha = nullptr) {
    if (image.channels != 3) throw DimensionError("write_png expects a 3-channel image");
    if (alpha && (alpha->height != image.height || alpha->width != image.width)) {
        throw DimensionError("write_png: alpha extent mismatch");
    }
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng init failed");
    }
    const std::size_t channels = alpha ? 4 : 3;
    std::vector<unsigned char> buffer(image.width * image.height * channels);
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
            unsigned char* px = buffer.data() + (y * image.width + x) * channels;
            for (std::size_t c = 0; c < 3; ++c) {
                float v = std::clamp(image.at(c, y, x), 0.f, 1.f);
                px[c] = static_cast<unsigned char>(std::lround(v * 255.f));
            }
            if (alpha) px[3] = alpha->at(y, x) ? 255 : 0;
        }
    std::vector<png_bytep> rows(image.height);
    for (std::size_t y = 0; y < image.height; ++y) rows[y] = buffer.data() + y * image.width * channels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG encode failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width, image.height, 8, alpha ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace dpef
