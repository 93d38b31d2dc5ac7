// Copyright 2026 The PEPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Desk-scale classification backbone.
//
//   [conv3x3 -> ReLU -> maxpool2] x (S-1)  ->  conv3x3 -> ReLU  (tap)
//   -> global average pool -> linear head
//
// The tap is the last convolutional stage, so the class activation map of
// class y averaged over the tap grid equals logit_y minus the head bias.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pepl/cam_engine.hpp"
#include "pepl/tensor.hpp"

namespace pepl {

struct ToyBackboneConfig {
    std::size_t in_channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::vector<std::size_t> widths{16, 32, 32};
    std::size_t num_classes = 10;
    std::uint64_t seed = 1;

    std::size_t num_stages() const { return widths.size(); }
    std::size_t tap_height() const { return height >> (num_stages() - 1); }
    std::size_t tap_width() const { return width >> (num_stages() - 1); }
    std::size_t tap_channels() const { return widths.back(); }
    int tap_layer() const { return static_cast<int>(num_stages()) - 1; }

    void validate() const {
        require(in_channels >= 1, "backbone needs at least one input channel");
        require(!widths.empty(), "backbone needs at least one stage");
        require(num_classes >= 2, "backbone needs at least 2 classes");
        for (auto w : widths) require(w >= 1, "stage width must be positive");
        const std::size_t div = std::size_t{1} << (num_stages() - 1);
        require(height % div == 0 && width % div == 0, "input size must be divisible by the pooling factor");
        require(tap_height() >= 2 && tap_width() >= 2, "tap feature grid must be at least 2x2");
    }

    bool operator==(const ToyBackboneConfig&) const = default;
};

template <typename T>
struct BackboneOutput {
    Grid<double> logits;  // [n x C]
    Tensor4<T> features;  // [n x d x h x w] at the tap layer
    int tap_layer = 0;

    FeatureMap<T> feature_map(std::size_t i, std::size_t image_id = 0) const {
        return FeatureMap<T>{slice_sample(features, i), image_id, tap_layer};
    }
};

/// Activations retained by a training forward pass.
template <typename T>
struct ForwardCache {
    std::vector<Tensor4<T>> stage_in;   // input of each conv stage
    std::vector<Tensor4<T>> stage_out;  // post-ReLU output of each conv stage
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    RowMatrix<T> pooled;  // [n x d]
};

namespace detail {

template <typename T>
void im2col3x3(const T* src, std::size_t c, std::size_t h, std::size_t w, T* cols) {
    const std::size_t hw = h * w;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = cols + ((ch * 9) + static_cast<std::size_t>(ky * 3 + kx)) * hw;
                const T* plane = src + ch * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y) + ky - 1;
                    for (std::size_t x = 0; x < w; ++x) {
                        const long sx = static_cast<long>(x) + kx - 1;
                        const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
                        dst[y * w + x] = inside ? plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : T{};
                    }
                }
            }
}

template <typename T>
void col2im3x3(const T* cols, std::size_t c, std::size_t h, std::size_t w, T* dst) {
    const std::size_t hw = h * w;
    std::fill(dst, dst + c * hw, T{});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = cols + ((ch * 9) + static_cast<std::size_t>(ky * 3 + kx)) * hw;
                T* plane = dst + ch * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    const long sy = static_cast<long>(y) + ky - 1;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    for (std::size_t x = 0; x < w; ++x) {
                        const long sx = static_cast<long>(x) + kx - 1;
                        if (sx < 0 || sx >= static_cast<long>(w)) continue;
                        plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] += src[y * w + x];
                    }
                }
            }
}

}  // namespace detail

template <typename T>
class ToyBackbone {
public:
    using Scalar = T;

    struct Block {
        std::size_t offset = 0;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::size_t size() const { return rows * cols; }
    };

    ToyBackbone() : ToyBackbone(ToyBackboneConfig{}) {}

    explicit ToyBackbone(ToyBackboneConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::size_t off = 0;
        std::size_t cin = cfg_.in_channels;
        for (std::size_t cout : cfg_.widths) {
            conv_w_.push_back({off, cout, cin * 9});
            off += cout * cin * 9;
            conv_b_.push_back({off, cout, 1});
            off += cout;
            cin = cout;
        }
        fc_w_ = {off, cfg_.num_classes, cin};
        off += cfg_.num_classes * cin;
        fc_b_ = {off, cfg_.num_classes, 1};
        off += cfg_.num_classes;
        params_.assign(off, T{});
        reset_parameters(cfg_.seed);
    }

    /// He-normal convolutions, scaled-normal head, zero biases.
    void reset_parameters(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::fill(params_.begin(), params_.end(), T{});
        for (const auto& b : conv_w_) {
            std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(b.cols)));
            for (std::size_t i = 0; i < b.size(); ++i) params_[b.offset + i] = static_cast<T>(nd(rng));
        }
        std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(fc_w_.cols)));
        for (std::size_t i = 0; i < fc_w_.size(); ++i) params_[fc_w_.offset + i] = static_cast<T>(nd(rng));
    }

    const ToyBackboneConfig& config() const { return cfg_; }
    std::size_t num_classes() const { return cfg_.num_classes; }
    std::size_t num_params() const { return params_.size(); }
    std::span<T> params() { return params_; }
    std::span<const T> params() const { return params_; }

    ClassWeights<T> classifier_weights() const {
        return ConstMatrixMap<T>(params_.data() + fc_w_.offset, static_cast<Eigen::Index>(fc_w_.rows),
                                 static_cast<Eigen::Index>(fc_w_.cols));
    }

    std::vector<T> classifier_bias() const {
        return {params_.begin() + static_cast<long>(fc_b_.offset),
                params_.begin() + static_cast<long>(fc_b_.offset + fc_b_.size())};
    }

    BackboneOutput<T> forward(const Tensor4<T>& x) const {
        ForwardCache<T> scratch;
        return run(x, scratch, false);
    }

    BackboneOutput<T> forward(const Tensor4<T>& x, ForwardCache<T>& cache) const { return run(x, cache, true); }

    /// Parameter gradient (same layout as params()) for an upstream gradient on the logits.
    std::vector<T> backward(const ForwardCache<T>& cache, const Grid<double>& dlogits) const {
        const std::size_t S = cfg_.num_stages();
        require(cache.stage_in.size() == S, "backward needs a training-mode forward cache");
        const std::size_t n = cache.stage_in.front().n;
        require(dlogits.rows == n && dlogits.cols == cfg_.num_classes, "logit gradient shape mismatch");

        std::vector<T> grad(params_.size(), T{});
        RowMatrix<T> dz(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg_.num_classes));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cfg_.num_classes; ++c)
                dz(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<T>(dlogits(i, c));

        block(grad, fc_w_) += dz.transpose() * cache.pooled;
        block(grad, fc_b_) += dz.colwise().sum().transpose();
        RowMatrix<T> dpooled = dz * cblock(params_, fc_w_);

        const Tensor4<T>& tap = cache.stage_out.back();
        Tensor4<T> dout(tap.n, tap.c, tap.h, tap.w);
        const T inv_hw = T(1) / static_cast<T>(tap.plane());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < tap.c; ++ch) {
                const T g = dpooled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ch)) * inv_hw;
                T* p = dout.sample(i) + ch * tap.plane();
                std::fill(p, p + tap.plane(), g);
            }

        for (std::size_t s = S; s-- > 0;) {
            const Tensor4<T>& xin = cache.stage_in[s];
            const Tensor4<T>& aout = cache.stage_out[s];
            for (std::size_t k = 0; k < dout.data.size(); ++k)
                if (!(aout.data[k] > T{})) dout.data[k] = T{};

            const std::size_t hw = xin.plane();
            RowMatrix<T> cols(static_cast<Eigen::Index>(xin.c * 9), static_cast<Eigen::Index>(hw));
            RowMatrix<T> dcols;
            Tensor4<T> din;
            if (s > 0) din = Tensor4<T>(xin.n, xin.c, xin.h, xin.w);
            auto dW = block(grad, conv_w_[s]);
            auto db = block(grad, conv_b_[s]);
            auto W = cblock(params_, conv_w_[s]);
            for (std::size_t i = 0; i < n; ++i) {
                ConstMatrixMap<T> dzi(dout.sample(i), static_cast<Eigen::Index>(aout.c), static_cast<Eigen::Index>(hw));
                detail::im2col3x3(xin.sample(i), xin.c, xin.h, xin.w, cols.data());
                dW.noalias() += dzi * cols.transpose();
                db += dzi.rowwise().sum();
                if (s > 0) {
                    dcols.noalias() = W.transpose() * dzi;
                    detail::col2im3x3(dcols.data(), xin.c, xin.h, xin.w, din.sample(i));
                }
            }
            if (s == 0) break;
            // din is the gradient w.r.t. the pooled output of stage s-1.
            const Tensor4<T>& prev = cache.stage_out[s - 1];
            Tensor4<T> dprev(prev.n, prev.c, prev.h, prev.w);
            const auto& arg = cache.pool_argmax[s - 1];
            const std::size_t per_sample = din.sample_size();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < per_sample; ++k) {
                    const std::size_t ch = k / din.plane();
                    dprev.sample(i)[ch * prev.plane() + arg[i * per_sample + k]] += din.sample(i)[k];
                }
            dout = std::move(dprev);
        }
        return grad;
    }

private:
    static MatrixMap<T> block(std::vector<T>& buf, const Block& b) {
        return MatrixMap<T>(buf.data() + b.offset, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
    }
    static ConstMatrixMap<T> cblock(const std::vector<T>& buf, const Block& b) {
        return ConstMatrixMap<T>(buf.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                                 static_cast<Eigen::Index>(b.cols));
    }

    BackboneOutput<T> run(const Tensor4<T>& x, ForwardCache<T>& cache, bool keep) const {
        require(x.c == cfg_.in_channels && x.h == cfg_.height && x.w == cfg_.width,
                "input batch does not match the configured image size");
        const std::size_t n = x.n;
        const std::size_t S = cfg_.num_stages();
        cache = ForwardCache<T>{};
        Tensor4<T> cur = x;
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t cout = cfg_.widths[s];
            const std::size_t hw = cur.plane();
            Tensor4<T> out(n, cout, cur.h, cur.w);
            RowMatrix<T> cols(static_cast<Eigen::Index>(cur.c * 9), static_cast<Eigen::Index>(hw));
            auto W = cblock(params_, conv_w_[s]);
            auto b = cblock(params_, conv_b_[s]);
            for (std::size_t i = 0; i < n; ++i) {
                detail::im2col3x3(cur.sample(i), cur.c, cur.h, cur.w, cols.data());
                MatrixMap<T> y(out.sample(i), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw));
                y.noalias() = W * cols;
                y.colwise() += b.col(0);
                y = y.cwiseMax(T{});
            }
            if (keep) cache.stage_in.push_back(std::move(cur));
            if (s + 1 < S) {
                Tensor4<T> pooled(n, cout, out.h / 2, out.w / 2);
                std::vector<std::uint32_t> arg(pooled.data.size());
                const std::size_t ph = pooled.h, pw = pooled.w;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t ch = 0; ch < cout; ++ch) {
                        const T* src = out.sample(i) + ch * out.plane();
                        for (std::size_t y = 0; y < ph; ++y)
                            for (std::size_t xx = 0; xx < pw; ++xx) {
                                std::uint32_t best = static_cast<std::uint32_t>((2 * y) * out.w + 2 * xx);
                                for (std::size_t dy = 0; dy < 2; ++dy)
                                    for (std::size_t dx = 0; dx < 2; ++dx) {
                                        const auto idx = static_cast<std::uint32_t>((2 * y + dy) * out.w + 2 * xx + dx);
                                        if (src[idx] > src[best]) best = idx;
                                    }
                                const std::size_t k = ((i * cout + ch) * ph + y) * pw + xx;
                                pooled.data[k] = src[best];
                                arg[k] = best;
                            }
                    }
                if (keep) {
                    cache.stage_out.push_back(std::move(out));
                    cache.pool_argmax.push_back(std::move(arg));
                }
                cur = std::move(pooled);
            } else {
                cur = std::move(out);
            }
        }

        const std::size_t d = cur.c;
        RowMatrix<T> pooled(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < d; ++ch) {
                const T* p = cur.sample(i) + ch * cur.plane();
                T s{};
                for (std::size_t k = 0; k < cur.plane(); ++k) s += p[k];
                pooled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ch)) = s / static_cast<T>(cur.plane());
            }
        RowMatrix<T> z = pooled * cblock(params_, fc_w_).transpose();
        z.rowwise() += cblock(params_, fc_b_).col(0).transpose();

        BackboneOutput<T> out;
        out.logits = Grid<double>(n, cfg_.num_classes);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cfg_.num_classes; ++c)
                out.logits(i, c) = static_cast<double>(z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
        out.tap_layer = cfg_.tap_layer();
        if (keep) {
            cache.stage_out.push_back(cur);
            cache.pooled = std::move(pooled);
        }
        out.features = std::move(cur);
        return out;
    }

    ToyBackboneConfig cfg_;
    std::vector<Block> conv_w_, conv_b_;
    Block fc_w_, fc_b_;
    std::vector<T> params_;
};

/// What the trainer needs from a backbone. A larger pretrained network can be
/// slotted in by satisfying this interface.
template <typename M>
concept Backbone = requires(M m, const M cm, const Tensor4<typename M::Scalar>& x,
                            ForwardCache<typename M::Scalar>& cache, const Grid<double>& g) {
    typename M::Scalar;
    { cm.forward(x) } -> std::same_as<BackboneOutput<typename M::Scalar>>;
    { cm.forward(x, cache) } -> std::same_as<BackboneOutput<typename M::Scalar>>;
    { cm.backward(cache, g) } -> std::same_as<std::vector<typename M::Scalar>>;
    { cm.classifier_weights() } -> std::same_as<ClassWeights<typename M::Scalar>>;
    { cm.num_classes() } -> std::convertible_to<std::size_t>;
    { m.params() } -> std::same_as<std::span<typename M::Scalar>>;
};

static_assert(Backbone<ToyBackbone<float>>);
static_assert(Backbone<ToyBackbone<double>>);

/// Momentum SGD: v <- m*v + g + wd*p ; p <- p - lr*v.
template <typename T>
struct SgdMomentum {
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<T> velocity;

    void step(std::span<T> params, std::span<const T> grad, double lr) {
        require(params.size() == grad.size(), "gradient size does not match parameters");
        if (velocity.size() != params.size()) velocity.assign(params.size(), T{});
        const T m = static_cast<T>(momentum);
        const T wd = static_cast<T>(weight_decay);
        const T eta = static_cast<T>(lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity[i] = m * velocity[i] + grad[i] + wd * params[i];
            params[i] -= eta * velocity[i];
        }
    }
};

}  // namespace pepl
