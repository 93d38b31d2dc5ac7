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
#include <span>
#include <vector>

#include "pepl/semantic_mixer.hpp"
#include "pepl/tensor.hpp"

namespace pepl {

/// Logit rows, one per sample.
using Logits = Grid<double>;

struct LossBreakdown {
    double l_sup = 0.0;
    double l_unsup = 0.0;
    double l_total = 0.0;
    double gamma = 1.0;
    double lambda = 1.0;
};

/// Loss value together with its gradient with respect to each logit matrix.
struct LossWithGrad {
    LossBreakdown loss;
    Logits grad_labeled;
    Logits grad_mixed;
};

namespace detail {

inline double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

inline void check_class(int y, std::size_t num_classes) {
    require(y >= 0 && static_cast<std::size_t>(y) < num_classes,
            "class id " + std::to_string(y) + " out of range for " + std::to_string(num_classes) + " classes");
}

}  // namespace detail

inline std::vector<double> softmax(std::span<const double> z) {
    const double lse = detail::log_sum_exp(z);
    std::vector<double> p(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) p[c] = std::exp(z[c] - lse);
    return p;
}

inline Grid<double> softmax_rows(const Logits& logits) {
    Grid<double> p(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        auto row = softmax(logits.row(i));
        std::copy(row.begin(), row.end(), p.row(i).begin());
    }
    return p;
}

/// Cross-entropy of softmax(z) against a hard class.
inline double cross_entropy(std::span<const double> z, int y) {
    detail::check_class(y, z.size());
    return detail::log_sum_exp(z) - z[static_cast<std::size_t>(y)];
}

inline double supervised_loss(const Logits& logits, std::span<const int> labels) {
    require(logits.rows >= 1, "supervised loss needs at least one sample");
    require(labels.size() == logits.rows, "one label per logit row required");
    double s = 0.0;
    for (std::size_t i = 0; i < logits.rows; ++i) s += cross_entropy(logits.row(i), labels[i]);
    return s / static_cast<double>(logits.rows);
}

inline Logits supervised_loss_grad(const Logits& logits, std::span<const int> labels) {
    require(logits.rows >= 1, "supervised loss needs at least one sample");
    require(labels.size() == logits.rows, "one label per logit row required");
    Logits g(logits.rows, logits.cols);
    const double inv_n = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        detail::check_class(labels[i], logits.cols);
        auto p = softmax(logits.row(i));
        for (std::size_t c = 0; c < logits.cols; ++c) g(i, c) = p[c] * inv_n;
        g(i, static_cast<std::size_t>(labels[i])) -= inv_n;
    }
    return g;
}

/// Mean over mixed samples of rho_a * CE(z, y_a) + rho_b * CE(z, y_b), where z is the
/// prediction for the mixed image itself. Empty input contributes zero.
inline double unsupervised_loss(const Logits& mixed_logits, std::span<const HybridLabel> labels) {
    require(labels.size() == mixed_logits.rows, "one hybrid label per mixed row required");
    if (mixed_logits.rows == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < mixed_logits.rows; ++i) {
        const auto& h = labels[i];
        s += h.rho_a * cross_entropy(mixed_logits.row(i), h.class_a) +
             h.rho_b * cross_entropy(mixed_logits.row(i), h.class_b);
    }
    return s / static_cast<double>(mixed_logits.rows);
}

inline Logits unsupervised_loss_grad(const Logits& mixed_logits, std::span<const HybridLabel> labels) {
    require(labels.size() == mixed_logits.rows, "one hybrid label per mixed row required");
    Logits g(mixed_logits.rows, mixed_logits.cols);
    if (mixed_logits.rows == 0) return g;
    const double inv_m = 1.0 / static_cast<double>(mixed_logits.rows);
    for (std::size_t i = 0; i < mixed_logits.rows; ++i) {
        const auto& h = labels[i];
        detail::check_class(h.class_a, mixed_logits.cols);
        detail::check_class(h.class_b, mixed_logits.cols);
        auto p = softmax(mixed_logits.row(i));
        const double w = h.rho_a + h.rho_b;
        for (std::size_t c = 0; c < mixed_logits.cols; ++c) g(i, c) = w * p[c] * inv_m;
        g(i, static_cast<std::size_t>(h.class_a)) -= h.rho_a * inv_m;
        g(i, static_cast<std::size_t>(h.class_b)) -= h.rho_b * inv_m;
    }
    return g;
}

inline LossBreakdown total_loss(double l_sup, double l_unsup, double gamma = 1.0, double lambda = 1.0) {
    require(gamma >= 0.0 && lambda >= 0.0, "loss weights must be nonnegative");
    return LossBreakdown{l_sup, l_unsup, gamma * l_sup + lambda * l_unsup, gamma, lambda};
}

/// Full objective and its gradient. An empty labeled batch contributes no
/// supervised term (used when only the unlabeled path is exercised).
inline LossWithGrad total_loss_with_grad(const Logits& labeled_logits, std::span<const int> labels,
                                         const Logits& mixed_logits, std::span<const HybridLabel> hybrid,
                                         double gamma, double lambda) {
    LossWithGrad out;
    double l_sup = 0.0;
    if (labeled_logits.rows > 0) {
        l_sup = supervised_loss(labeled_logits, labels);
        out.grad_labeled = supervised_loss_grad(labeled_logits, labels);
        for (double& v : out.grad_labeled.data) v *= gamma;
    } else {
        out.grad_labeled = Logits(0, labeled_logits.cols);
    }
    const double l_unsup = unsupervised_loss(mixed_logits, hybrid);
    out.grad_mixed = unsupervised_loss_grad(mixed_logits, hybrid);
    for (double& v : out.grad_mixed.data) v *= lambda;
    out.loss = total_loss(l_sup, l_unsup, gamma, lambda);
    return out;
}

}  // namespace pepl
