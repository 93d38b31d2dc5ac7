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
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "pepl/cam_engine.hpp"
#include "pepl/tensor.hpp"
#include "pepl/threshold_scheduler.hpp"

namespace pepl {

/// Binary region mask; 1 marks pixels taken from the donor image.
struct MixMask {
    Grid<std::uint8_t> bits;
    double area_fraction = 0.0;

    std::size_t height() const { return bits.rows; }
    std::size_t width() const { return bits.cols; }
};

struct HybridLabel {
    int class_a = 0;
    double rho_a = 1.0;
    int class_b = 0;
    double rho_b = 0.0;
};

template <typename T>
struct MixRecipe {
    std::size_t index_a = 0;
    std::size_t index_b = 0;
    MixMask mask;
    Planes<T> mixed_image;
    HybridLabel label;
};

/// Mask covering the half-open rectangle [y0, y1) x [x0, x1).
inline MixMask rect_mask(std::size_t height, std::size_t width, std::size_t y0, std::size_t x0, std::size_t y1,
                         std::size_t x1) {
    require(height >= 1 && width >= 1, "mask must be at least 1x1");
    y1 = std::min(y1, height);
    x1 = std::min(x1, width);
    MixMask m;
    m.bits = Grid<std::uint8_t>(height, width, 0);
    std::size_t ones = 0;
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
            m.bits(y, x) = 1;
            ++ones;
        }
    m.area_fraction = static_cast<double>(ones) / static_cast<double>(height * width);
    return m;
}

inline double exact_area_fraction(const MixMask& m) {
    std::size_t ones = 0;
    for (auto b : m.bits.data) ones += (b != 0);
    return static_cast<double>(ones) / static_cast<double>(m.bits.size());
}

/// Rectangle for a given target area fraction: each side is scaled by
/// sqrt(lambda) and the rectangle is placed uniformly where it fits.
template <typename Rng>
MixMask mask_for_lambda(std::size_t height, std::size_t width, double lambda, Rng& rng) {
    require(height >= 1 && width >= 1, "mask must be at least 1x1");
    lambda = std::clamp(lambda, 0.0, 1.0);
    const double side = std::sqrt(lambda);
    const auto cut_h = static_cast<std::size_t>(std::lround(side * static_cast<double>(height)));
    const auto cut_w = static_cast<std::size_t>(std::lround(side * static_cast<double>(width)));
    if (cut_h == 0 || cut_w == 0) return rect_mask(height, width, 0, 0, 0, 0);
    std::uniform_int_distribution<std::size_t> top(0, height - cut_h);
    std::uniform_int_distribution<std::size_t> left(0, width - cut_w);
    const std::size_t y0 = top(rng);
    const std::size_t x0 = left(rng);
    return rect_mask(height, width, y0, x0, y0 + cut_h, x0 + cut_w);
}

template <typename Rng>
MixMask sample_mask(std::size_t height, std::size_t width, Rng& rng) {
    std::uniform_real_distribution<double> lam(0.0, 1.0);
    const double lambda = lam(rng);
    return mask_for_lambda(height, width, lambda, rng);
}

/// rho_a is the share of image a's semantic mass left outside the mask,
/// rho_b the share of image b's mass inside it. Both are clamped to [0, 1].
inline std::pair<double, double> semantic_proportions(const SemanticMap& map_a, const SemanticMap& map_b,
                                                      const MixMask& mask) {
    require(map_a.map.same_shape(mask.bits) && map_b.map.same_shape(mask.bits),
            "semantic maps and mask must share a shape");
    double removed_a = 0.0;
    double pasted_b = 0.0;
    std::size_t ones = 0;
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        if (mask.bits.data[i]) {
            ++ones;
            removed_a += map_a.map.data[i];
            pasted_b += map_b.map.data[i];
        }
    }
    // Maps carry unit mass by construction; a full mask covers all of it (avoids 1 - (1 ± ulp)).
    if (ones == mask.bits.size()) return {0.0, 1.0};
    return {std::clamp(1.0 - removed_a, 0.0, 1.0), std::clamp(pasted_b, 0.0, 1.0)};
}

/// Area-only proportions, used by the area-mixing baseline.
inline std::pair<double, double> area_proportions(const MixMask& mask) {
    return {1.0 - mask.area_fraction, mask.area_fraction};
}

template <typename T>
Planes<T> compose(const Planes<T>& image_a, const Planes<T>& image_b, const MixMask& mask) {
    require(image_a.same_shape(image_b), "images to mix must share a shape");
    require(image_a.h == mask.height() && image_a.w == mask.width(), "mask does not match image size");
    Planes<T> out = image_a;
    for (std::size_t ch = 0; ch < image_a.c; ++ch)
        for (std::size_t y = 0; y < image_a.h; ++y)
            for (std::size_t x = 0; x < image_a.w; ++x)
                if (mask.bits(y, x)) out.at(ch, y, x) = image_b.at(ch, y, x);
    return out;
}

template <typename T>
MixRecipe<T> mix_pair(const Planes<T>& image_a, const Planes<T>& image_b, const SemanticMap& map_a,
                      const SemanticMap& map_b, int label_a, int label_b, const MixMask& mask) {
    MixRecipe<T> r;
    r.mixed_image = compose(image_a, image_b, mask);
    const auto [rho_a, rho_b] = semantic_proportions(map_a, map_b, mask);
    r.mask = mask;
    r.label = HybridLabel{label_a, rho_a, label_b, rho_b};
    return r;
}

/// Random disjoint pairs over the selected batch positions; an odd leftover is dropped.
template <typename Rng>
std::vector<std::pair<std::size_t, std::size_t>> pair_batch(const PseudoLabelSelection& selection, Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (selection.size() < 2) return pairs;
    std::vector<std::size_t> order = selection.selected_indices;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i + 1 < order.size(); i += 2) pairs.emplace_back(order[i], order[i + 1]);
    return pairs;
}

}  // namespace pepl
