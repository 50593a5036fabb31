// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dpef/errors.hpp"
#include "dpef/image.hpp"
#include "dpef/numerics/ops.hpp"
#include "dpef/params.hpp"

namespace dpef {

struct EncoderConfig {
    std::size_t image_h = 64;
    std::size_t image_w = 32;
    std::size_t patch = 8;
    std::size_t dim = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    bool normalize_cls = true;
    double pixel_mean = 0.0;  // inputs enter as (x - mean) / std
    double pixel_std = 1.0;

    std::size_t grid_h() const { return image_h / patch; }
    std::size_t grid_w() const { return image_w / patch; }
    std::size_t num_patches() const { return grid_h() * grid_w(); }
    std::size_t patch_len() const { return 3 * patch * patch; }
    std::size_t mlp_hidden() const { return static_cast<std::size_t>(std::lround(mlp_ratio * double(dim))); }

    void validate(std::size_t parts = 1) const {
        if (patch == 0 || image_h % patch != 0 || image_w % patch != 0) {
            throw ConfigError("encoder: image extents must be multiples of the patch size");
        }
        if (heads == 0 || dim % heads != 0) throw ConfigError("encoder: dim must be divisible by heads");
        if (depth == 0 || dim < 2) throw ConfigError("encoder: depth and dim must be positive");
        if (num_patches() < parts) throw ConfigError("encoder: fewer patch tokens than parts");
        if (mlp_hidden() == 0) throw ConfigError("encoder: mlp_ratio too small");
        if (!(pixel_std > 0)) throw ConfigError("encoder: pixel_std must be positive");
    }

    /// ViT-Base geometry on 256x128 inputs (N = 128, c = 768).
    static EncoderConfig paper_scale() {
        EncoderConfig c;
        c.image_h = 256;
        c.image_w = 128;
        c.patch = 16;
        c.dim = 768;
        c.depth = 12;
        c.heads = 12;
        c.mlp_ratio = 4.0;
        return c;
    }
};

struct GridPos {
    std::size_t row = 0;
    std::size_t col = 0;
    bool operator==(const GridPos&) const = default;
    auto operator<=>(const GridPos&) const = default;
};

/// Encoder output: class token f_g plus N patch tokens with their lattice cells.
template <typename T>
struct TokenSet {
    Tensor<T> cls;      // 1 x c
    Tensor<T> patches;  // N x c
    std::vector<GridPos> grid;

    std::size_t size() const { return patches.rows(); }
    std::size_t dim() const { return patches.cols(); }
};

/// Splits `ordered` into `parts` contiguous groups whose sizes differ by at
/// most one, larger groups first.
inline std::vector<std::vector<std::size_t>> split_groups(const std::vector<std::size_t>& ordered,
                                                          std::size_t parts) {
    if (parts == 0 || ordered.size() < parts) {
        throw SelectionTooSmallError("cannot split " + std::to_string(ordered.size()) + " tokens into " +
                                     std::to_string(parts) + " parts");
    }
    const std::size_t base = ordered.size() / parts, extra = ordered.size() % parts;
    std::vector<std::vector<std::size_t>> groups(parts);
    std::size_t pos = 0;
    for (std::size_t g = 0; g < parts; ++g) {
        const std::size_t len = base + (g < extra ? 1 : 0);
        groups[g].assign(ordered.begin() + pos, ordered.begin() + pos + len);
        pos += len;
    }
    return groups;
}

/// Token indices sorted into grid raster order (row-major, top-left first).
inline std::vector<std::size_t> raster_order(const std::vector<GridPos>& grid, std::vector<std::size_t> indices) {
    std::stable_sort(indices.begin(), indices.end(),
                     [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });
    return indices;
}

/// Pre-selection representation f_q: P raster-order groups of all patch
/// tokens, averaged, concatenated into 1 x (P*c).
template <typename T>
Tensor<T> pool_all_tokens(const TokenSet<T>& tokens, std::size_t parts) {
    const std::size_t n = tokens.size();
    if (parts == 0 || parts > n) throw ConfigError("pool_all_tokens: need 1 <= P <= N");
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    auto groups = split_groups(raster_order(tokens.grid, std::move(all)), parts);
    return reshape(group_mean_rows(tokens.patches, groups), {1, parts * tokens.dim()});
}

/// Small pre-norm ViT: patch embedding, class token, learned 1-D positions,
/// `depth` transformer blocks, final LayerNorm, L2-normalized tokens.
template <typename T>
class Encoder {
public:
    struct Block {
        Tensor<T> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
        Tensor<T> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
    };

    Encoder() = default;

    Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
        config_.validate();
        const std::size_t c = config_.dim, n = config_.num_patches(), hid = config_.mlp_hidden();
        patch_w_ = init_trunc_normal<T>({config_.patch_len(), c}, rng);
        patch_b_ = init_const<T>({c}, 0.0);
        cls_ = init_trunc_normal<T>({1, c}, rng);
        pos_ = init_trunc_normal<T>({n + 1, c}, rng);
        for (std::size_t d = 0; d < config_.depth; ++d) {
            Block b;
            b.ln1_g = init_const<T>({c}, 1.0);
            b.ln1_b = init_const<T>({c}, 0.0);
            b.qkv_w = init_trunc_normal<T>({c, 3 * c}, rng);
            b.qkv_b = init_const<T>({3 * c}, 0.0);
            b.proj_w = init_trunc_normal<T>({c, c}, rng);
            b.proj_b = init_const<T>({c}, 0.0);
            b.ln2_g = init_const<T>({c}, 1.0);
            b.ln2_b = init_const<T>({c}, 0.0);
            b.fc1_w = init_trunc_normal<T>({c, hid}, rng);
            b.fc1_b = init_const<T>({hid}, 0.0);
            b.fc2_w = init_trunc_normal<T>({hid, c}, rng);
            b.fc2_b = init_const<T>({c}, 0.0);
            blocks_.push_back(std::move(b));
        }
        norm_g_ = init_const<T>({c}, 1.0);
        norm_b_ = init_const<T>({c}, 0.0);
    }

    const EncoderConfig& config() const { return config_; }

    void collect_parameters(const std::string& prefix, ParamList<T>& out) const {
        out.emplace_back(prefix + "patch_embed/weight", patch_w_);
        out.emplace_back(prefix + "patch_embed/bias", patch_b_);
        out.emplace_back(prefix + "cls_token", cls_);
        out.emplace_back(prefix + "pos_embed", pos_);
        for (std::size_t d = 0; d < blocks_.size(); ++d) {
            const auto& b = blocks_[d];
            const std::string p = prefix + "block" + std::to_string(d) + "/";
            out.emplace_back(p + "ln1/gamma", b.ln1_g);
            out.emplace_back(p + "ln1/beta", b.ln1_b);
            out.emplace_back(p + "attn/qkv/weight", b.qkv_w);
            out.emplace_back(p + "attn/qkv/bias", b.qkv_b);
            out.emplace_back(p + "attn/proj/weight", b.proj_w);
            out.emplace_back(p + "attn/proj/bias", b.proj_b);
            out.emplace_back(p + "ln2/gamma", b.ln2_g);
            out.emplace_back(p + "ln2/beta", b.ln2_b);
            out.emplace_back(p + "mlp/fc1/weight", b.fc1_w);
            out.emplace_back(p + "mlp/fc1/bias", b.fc1_b);
            out.emplace_back(p + "mlp/fc2/weight", b.fc2_w);
            out.emplace_back(p + "mlp/fc2/bias", b.fc2_b);
        }
        out.emplace_back(prefix + "norm/gamma", norm_g_);
        out.emplace_back(prefix + "norm/beta", norm_b_);
    }

    /// Flattened patches in raster order: N x (3*p*p), channel-major per patch.
    Tensor<T> patchify(const Image& image) const {
        if (image.channels != 3 || image.height != config_.image_h || image.width != config_.image_w) {
            throw ConfigError("encode: image is " + std::to_string(image.channels) + "x" +
                              std::to_string(image.height) + "x" + std::to_string(image.width) + ", expected 3x" +
                              std::to_string(config_.image_h) + "x" + std::to_string(config_.image_w));
        }
        const std::size_t p = config_.patch, gw = config_.grid_w(), n = config_.num_patches();
        const std::size_t len = config_.patch_len();
        const T mean = T(config_.pixel_mean), inv_std = T(1.0 / config_.pixel_std);
        std::vector<T> data(n * len);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t r = i / gw, c = i % gw;
            T* dst = data.data() + i * len;
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) *dst++ = (T(image.at(ch, r * p + y, c * p + x)) - mean) * inv_std;
        }
        return Tensor<T>({n, len}, std::move(data));
    }

    /// Linear patch embeddings before positions and attention (N x c).
    Tensor<T> embed_patches(const Image& image) const { return linear(patchify(image), patch_w_, patch_b_); }

    std::vector<GridPos> grid() const {
        std::vector<GridPos> g(config_.num_patches());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = {i / config_.grid_w(), i % config_.grid_w()};
        return g;
    }

    TokenSet<T> encode(const Image& image) const {
        const std::size_t n = config_.num_patches();
        auto x = add(concat_rows<T>({cls_, embed_patches(image)}), pos_);
        for (const auto& b : blocks_) x = block_forward(b, x);
        x = layer_norm(x, norm_g_, norm_b_);

        TokenSet<T> out;
        out.cls = slice_rows(x, 0, 1);
        if (config_.normalize_cls) out.cls = l2_normalize(out.cls);
        out.patches = l2_normalize(slice_rows(x, 1, n + 1));
        out.grid = grid();
        return out;
    }

private:
    Tensor<T> block_forward(const Block& b, const Tensor<T>& x) const {
        const std::size_t c = config_.dim, h = config_.heads, hd = c / h;
        const T inv_sqrt = T(1.0 / std::sqrt(double(hd)));
        auto qkv = linear(layer_norm(x, b.ln1_g, b.ln1_b), b.qkv_w, b.qkv_b);
        std::vector<Tensor<T>> heads;
        heads.reserve(h);
        for (std::size_t i = 0; i < h; ++i) {
            auto q = slice_cols(qkv, i * hd, (i + 1) * hd);
            auto k = slice_cols(qkv, c + i * hd, c + (i + 1) * hd);
            auto v = slice_cols(qkv, 2 * c + i * hd, 2 * c + (i + 1) * hd);
            heads.push_back(matmul(softmax(scale(matmul_nt(q, k), inv_sqrt)), v));
        }
        auto attn = linear(h == 1 ? heads.front() : concat_cols(heads), b.proj_w, b.proj_b);
        auto y = add(x, attn);
        auto mlp = linear(gelu(linear(layer_norm(y, b.ln2_g, b.ln2_b), b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
        return add(y, mlp);
    }

    EncoderConfig config_;
    Tensor<T> patch_w_, patch_b_, cls_, pos_;
    std::vector<Block> blocks_;
    Tensor<T> norm_g_, norm_b_;
};

}  // namespace dpef
