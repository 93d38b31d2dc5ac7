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

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "pepl/tensor.hpp"

namespace pepl {

/// Activations of the tapped layer for one image, [channels x h x w].
template <typename T>
struct FeatureMap {
    Planes<T> act;
    std::size_t image_id = 0;
    int tap_layer = 0;
};

/// Linear-head weights, [num_classes x channels].
template <typename T>
using ClassWeights = RowMatrix<T>;

/// Nonnegative map at image resolution with unit total mass.
struct SemanticMap {
    Grid<double> map;
    std::size_t image_id = 0;
    int class_id = 0;
};

inline constexpr double kDegenerateCamMass = 1e-12;

/// Channel-weighted sum at feature resolution, no clamp, no resize.
template <typename T>
Grid<double> cam_grid(const FeatureMap<T>& features, const ClassWeights<T>& weights, int class_id) {
    const auto& f = features.act;
    require(f.c >= 1 && f.h >= 1 && f.w >= 1, "feature map must be non-empty");
    require(class_id >= 0 && class_id < weights.rows(), "CAM class id out of range");
    require(static_cast<std::size_t>(weights.cols()) == f.c, "class weights do not match feature channels");

    Grid<double> g(f.h, f.w, 0.0);
    const std::size_t plane = f.h * f.w;
    for (std::size_t ch = 0; ch < f.c; ++ch) {
        const double wc = static_cast<double>(weights(class_id, static_cast<Eigen::Index>(ch)));
        const T* src = f.data.data() + ch * plane;
        for (std::size_t p = 0; p < plane; ++p) g.data[p] += wc * static_cast<double>(src[p]);
    }
    return g;
}

/// Half-pixel-centred bilinear resize (edge-clamped). A constant input stays
/// exactly constant because each tap is written as a + t*(b - a).
inline Grid<double> upsample_bilinear(const Grid<double>& in, std::size_t out_h, std::size_t out_w) {
    require(in.rows >= 1 && in.cols >= 1, "cannot resize an empty map");
    require(out_h >= in.rows && out_w >= in.cols, "upsampling target smaller than feature grid");
    if (out_h == in.rows && out_w == in.cols) return in;

    auto axis = [](std::size_t dst, std::size_t n_in, std::size_t n_out, std::size_t& lo, std::size_t& hi,
                   double& t) {
        double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
        lo = static_cast<std::size_t>(std::floor(src));
        hi = std::min(lo + 1, n_in - 1);
        t = src - static_cast<double>(lo);
    };

    Grid<double> out(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        std::size_t y0, y1;
        double ty;
        axis(y, in.rows, out_h, y0, y1, ty);
        for (std::size_t x = 0; x < out_w; ++x) {
            std::size_t x0, x1;
            double tx;
            axis(x, in.cols, out_w, x0, x1, tx);
            const double top = in(y0, x0) + tx * (in(y0, x1) - in(y0, x0));
            const double bot = in(y1, x0) + tx * (in(y1, x1) - in(y1, x0));
            out(y, x) = top + ty * (bot - top);
        }
    }
    return out;
}

/// Clamped, upsampled class activation map.
template <typename T>
Grid<double> raw_cam(const FeatureMap<T>& features, const ClassWeights<T>& weights, int class_id,
                     std::size_t out_h, std::size_t out_w) {
    require(out_h >= features.act.h && out_w >= features.act.w, "upsampling target smaller than feature grid");
    Grid<double> g = cam_grid(features, weights, class_id);
    for (double& v : g.data) v = std::max(v, 0.0);
    return upsample_bilinear(g, out_h, out_w);
}

/// Scales a nonnegative map to unit mass; an (almost) all-zero map becomes uniform.
inline SemanticMap normalize(const Grid<double>& cam) {
    require(cam.size() > 0, "cannot normalize an empty map");
    double total = 0.0;
    for (double v : cam.data) {
        require(v >= 0.0, "negative CAM entry reached normalize (clamp skipped?)");
        total += v;
    }
    SemanticMap s;
    s.map = Grid<double>(cam.rows, cam.cols);
    if (total < kDegenerateCamMass) {
        std::fill(s.map.data.begin(), s.map.data.end(), 1.0 / static_cast<double>(cam.size()));
        return s;
    }
    for (std::size_t i = 0; i < cam.size(); ++i) s.map.data[i] = cam.data[i] / total;
    return s;
}

template <typename T>
SemanticMap semantic_map(const FeatureMap<T>& features, const ClassWeights<T>& weights, int class_id,
                         std::size_t out_h, std::size_t out_w) {
    SemanticMap s = normalize(raw_cam(features, weights, class_id, out_h, out_w));
    s.image_id = features.image_id;
    s.class_id = class_id;
    return s;
}

}  // namespace pepl
