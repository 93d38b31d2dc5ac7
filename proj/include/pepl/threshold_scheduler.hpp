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

// Self-adaptive confidence thresholds for pseudo-label selection.
//
// Two exponential moving averages are tracked over the stream of unlabeled
// prediction batches: a global one over each sample's top probability and a
// per-class one over the mean predicted probability of each class. The
// per-class threshold is the per-class average scaled by its maximum and
// multiplied by the global average, so the most-expected class gets exactly
// the global threshold.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "pepl/tensor.hpp"

namespace pepl {

/// Rows of class probabilities, one row per unlabeled sample.
using PredictionBatch = Grid<double>;

inline constexpr double kSimplexTolerance = 1e-6;

inline void validate_prediction_batch(const PredictionBatch& batch, std::size_t num_classes) {
    require(batch.cols == num_classes, "prediction batch has " + std::to_string(batch.cols) +
                                           " columns, expected " + std::to_string(num_classes));
    for (std::size_t i = 0; i < batch.rows; ++i) {
        double s = 0.0;
        for (double p : batch.row(i)) {
            require(std::isfinite(p) && p >= -kSimplexTolerance, "prediction row " + std::to_string(i) +
                                                                     " has a negative or non-finite entry");
            s += p;
        }
        require(std::abs(s - 1.0) <= kSimplexTolerance,
                "prediction row " + std::to_string(i) + " is not on the simplex");
    }
}

struct ThresholdState {
    std::uint64_t step = 0;
    double beta = 0.999;
    double tau_global = 0.0;
    std::vector<double> class_expect;

    std::size_t num_classes() const { return class_expect.size(); }

    bool operator==(const ThresholdState&) const = default;
};

struct PseudoLabelSelection {
    std::vector<std::size_t> selected_indices;
    std::vector<int> labels;
    std::vector<double> confidences;

    std::size_t size() const { return selected_indices.size(); }
    bool empty() const { return selected_indices.empty(); }
};

inline ThresholdState init_state(std::size_t num_classes, double beta) {
    require(num_classes >= 2, "threshold state needs at least 2 classes");
    require(beta >= 0.0 && beta < 1.0, "EMA momentum must lie in [0, 1)");
    ThresholdState s;
    s.step = 0;
    s.beta = beta;
    s.tau_global = 1.0 / static_cast<double>(num_classes);
    s.class_expect.assign(num_classes, 1.0 / static_cast<double>(num_classes));
    return s;
}

inline void validate_state(const ThresholdState& s) {
    require(s.num_classes() >= 2, "threshold state needs at least 2 classes");
    require(s.beta >= 0.0 && s.beta < 1.0, "EMA momentum must lie in [0, 1)");
    require(s.tau_global > 0.0 && s.tau_global <= 1.0, "global threshold outside (0, 1]");
    for (double e : s.class_expect) require(e > 0.0 && e <= 1.0, "class expectation outside (0, 1]");
}

/// One EMA step over a batch. Partial batches use their own mean.
inline ThresholdState update(const ThresholdState& state, const PredictionBatch& batch) {
    const std::size_t C = state.num_classes();
    validate_prediction_batch(batch, C);
    require(batch.rows >= 1, "threshold update needs a non-empty batch");

    double mean_max = 0.0;
    std::vector<double> mean_prob(C, 0.0);
    for (std::size_t i = 0; i < batch.rows; ++i) {
        auto r = batch.row(i);
        mean_max += *std::max_element(r.begin(), r.end());
        for (std::size_t c = 0; c < C; ++c) mean_prob[c] += r[c];
    }
    const double n = static_cast<double>(batch.rows);
    mean_max /= n;

    ThresholdState next = state;
    next.step = state.step + 1;
    const double b = state.beta;
    next.tau_global = b * state.tau_global + (1.0 - b) * mean_max;
    for (std::size_t c = 0; c < C; ++c)
        next.class_expect[c] = b * state.class_expect[c] + (1.0 - b) * (mean_prob[c] / n);
    return next;
}

inline std::vector<double> class_thresholds(const ThresholdState& state) {
    validate_state(state);
    const double peak = *std::max_element(state.class_expect.begin(), state.class_expect.end());
    std::vector<double> out(state.num_classes());
    for (std::size_t c = 0; c < out.size(); ++c) {
        // The peak class maps to ratio 1.0 exactly, so its threshold is tau_global bit-for-bit.
        out[c] = (state.class_expect[c] / peak) * state.tau_global;
    }
    return out;
}

/// Selects rows whose top probability strictly exceeds the threshold of
/// their argmax class, against an explicit threshold vector.
inline PseudoLabelSelection select_with_thresholds(std::span<const double> thresholds,
                                                   const PredictionBatch& batch) {
    validate_prediction_batch(batch, thresholds.size());
    PseudoLabelSelection sel;
    for (std::size_t i = 0; i < batch.rows; ++i) {
        auto r = batch.row(i);
        const auto it = std::max_element(r.begin(), r.end());
        const auto label = static_cast<std::size_t>(it - r.begin());
        if (*it > thresholds[label]) {
            sel.selected_indices.push_back(i);
            sel.labels.push_back(static_cast<int>(label));
            sel.confidences.push_back(*it);
        }
    }
    return sel;
}

inline PseudoLabelSelection select(const ThresholdState& state, const PredictionBatch& batch) {
    const auto th = class_thresholds(state);
    return select_with_thresholds(th, batch);
}

}  // namespace pepl
