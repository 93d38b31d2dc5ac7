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
#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pepl/cam_engine.hpp"
#include "pepl/model_zoo.hpp"
#include "pepl/objectives.hpp"

namespace pepl {
namespace {

ToyBackboneConfig small_config(std::uint64_t seed = 3) {
    ToyBackboneConfig c;
    c.in_channels = 2;
    c.height = 8;
    c.width = 8;
    c.widths = {3, 4};
    c.num_classes = 3;
    c.seed = seed;
    return c;
}

template <typename T>
Tensor4<T> random_batch(std::size_t n, const ToyBackboneConfig& c, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 0.5);
    Tensor4<T> x(n, c.in_channels, c.height, c.width);
    for (auto& v : x.data) v = static_cast<T>(g(rng));
    return x;
}

TEST(ToyBackboneConfig, TapGeometry) {
    ToyBackboneConfig c;
    EXPECT_EQ(c.tap_height(), 8u);
    EXPECT_EQ(c.tap_width(), 8u);
    EXPECT_EQ(c.tap_channels(), 32u);
    EXPECT_EQ(c.tap_layer(), 2);
    EXPECT_NO_THROW(c.validate());
}

TEST(ToyBackboneConfig, RejectsDegenerateShapes) {
    ToyBackboneConfig c;
    c.widths = {8, 8, 8, 8, 8};  // 32 / 16 = 2: still fine
    EXPECT_NO_THROW(c.validate());
    c.widths.push_back(8);  // 1x1 tap grid
    EXPECT_THROW(c.validate(), Error);
    c = ToyBackboneConfig{};
    c.height = 30;  // not divisible by 4
    EXPECT_THROW(c.validate(), Error);
    c = ToyBackboneConfig{};
    c.num_classes = 1;
    EXPECT_THROW(c.validate(), Error);
}

TEST(ToyBackbone, OutputShapes) {
    ToyBackbone<float> m;
    std::mt19937_64 rng(1);
    const auto out = m.forward(random_batch<float>(3, m.config(), rng));
    EXPECT_EQ(out.logits.rows, 3u);
    EXPECT_EQ(out.logits.cols, 10u);
    EXPECT_EQ(out.features.n, 3u);
    EXPECT_EQ(out.features.c, 32u);
    EXPECT_EQ(out.features.h, 8u);
    EXPECT_EQ(out.features.w, 8u);
    EXPECT_EQ(out.tap_layer, 2);
    const auto W = m.classifier_weights();
    EXPECT_EQ(W.rows(), 10);
    EXPECT_EQ(W.cols(), 32);
}

TEST(ToyBackbone, RejectsWrongInputShape) {
    ToyBackbone<float> m;
    EXPECT_THROW(m.forward(Tensor4<float>(1, 3, 16, 16)), Error);
    EXPECT_THROW(m.forward(Tensor4<float>(1, 1, 32, 32)), Error);
}

TEST(ToyBackbone, DuplicatedInputsGiveIdenticalRows) {
    ToyBackbone<float> m;
    std::mt19937_64 rng(2);
    const auto one = random_batch<float>(1, m.config(), rng);
    Tensor4<float> two(2, 3, 32, 32);
    std::copy(one.data.begin(), one.data.end(), two.data.begin());
    std::copy(one.data.begin(), one.data.end(), two.data.begin() + static_cast<long>(one.data.size()));
    const auto out = m.forward(two);
    for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(out.logits(0, c), out.logits(1, c));
}

TEST(ToyBackbone, SeedDeterminesEverything) {
    ToyBackbone<float> a(small_config(9)), b(small_config(9)), c(small_config(10));
    EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
    EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
    std::mt19937_64 rng(4);
    const auto x = random_batch<float>(4, a.config(), rng);
    EXPECT_EQ(a.forward(x).logits.data, b.forward(x).logits.data);
}

TEST(ToyBackbone, TrainingForwardMatchesInference) {
    ToyBackbone<double> m(small_config());
    std::mt19937_64 rng(5);
    const auto x = random_batch<double>(3, m.config(), rng);
    ForwardCache<double> cache;
    EXPECT_EQ(m.forward(x, cache).logits.data, m.forward(x).logits.data);
}

// Pooled pre-clamp CAM equals the bias-free class score.
TEST(ToyBackbone, CamReproducesLogits) {
    ToyBackbone<float> m;
    std::mt19937_64 rng(6);
    const auto x = random_batch<float>(5, m.config(), rng);
    const auto out = m.forward(x);
    const auto W = m.classifier_weights();
    const auto bias = m.classifier_bias();
    for (std::size_t i = 0; i < 5; ++i)
        for (int c = 0; c < 10; ++c) {
            const auto cam = cam_grid(out.feature_map(i), W, c);
            const double pooled = cam.sum() / static_cast<double>(cam.size());
            const double score = out.logits(i, static_cast<std::size_t>(c)) - bias[static_cast<std::size_t>(c)];
            EXPECT_NEAR(pooled, score, 1e-4 * std::max(1.0, std::abs(score)));
        }
}

TEST(Im2col, RoundTripIsAdjoint) {
    // <im2col(x), y> == <x, col2im(y)>
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    const std::size_t c = 2, h = 5, w = 4;
    std::vector<double> x(c * h * w), y(c * 9 * h * w), cols(c * 9 * h * w), back(c * h * w, 0.0);
    for (auto& v : x) v = g(rng);
    for (auto& v : y) v = g(rng);
    detail::im2col3x3(x.data(), c, h, w, cols.data());
    detail::col2im3x3(y.data(), c, h, w, back.data());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += cols[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-10);
}

// Parameter gradients of a CE loss against central differences, in double.
TEST(ToyBackbone, BackwardMatchesFiniteDifferences) {
    ToyBackbone<double> m(small_config());
    std::mt19937_64 rng(8);
    const auto x = random_batch<double>(2, m.config(), rng);
    const std::vector<int> y{1, 2};
    ForwardCache<double> cache;
    const auto out = m.forward(x, cache);
    const auto grad = m.backward(cache, supervised_loss_grad(out.logits, y));

    std::vector<double> p(m.params().begin(), m.params().end());
    const auto f = [&](const std::vector<double>& q) {
        std::copy(q.begin(), q.end(), m.params().begin());
        return supervised_loss(m.forward(x).logits, y);
    };
    std::size_t checked = 0;
    for (std::size_t i = 0; i < p.size(); i += 3) {
        const double num = oracle::central_difference(f, p, i, 1e-5);
        EXPECT_NEAR(grad[i], num, 1e-4 * std::max(1e-2, std::abs(num))) << "param " << i;
        ++checked;
    }
    std::copy(p.begin(), p.end(), m.params().begin());
    EXPECT_GT(checked, 50u);
}

TEST(SgdMomentum, UpdateRule) {
    SgdMomentum<double> opt{0.5, 0.1, {}};
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.2, 0.4};
    opt.step(p, g, 0.1);
    // v = g + wd*p = [0.3, 0.2]
    EXPECT_NEAR(p[0], 1.0 - 0.03, 1e-15);
    EXPECT_NEAR(p[1], -2.0 - 0.02, 1e-15);
    opt.step(p, g, 0.1);
    // v = 0.5*v + g + wd*p
    const double v0 = 0.5 * 0.3 + 0.2 + 0.1 * 0.97, v1 = 0.5 * 0.2 + 0.4 + 0.1 * -2.02;
    EXPECT_NEAR(p[0], 0.97 - 0.1 * v0, 1e-15);
    EXPECT_NEAR(p[1], -2.02 - 0.1 * v1, 1e-15);
    EXPECT_THROW(opt.step(p, std::vector<double>{1.0}, 0.1), Error);
}

TEST(SgdMomentum, StepChangesClassifierWeights) {
    ToyBackbone<float> m(small_config());
    std::mt19937_64 rng(3);
    const auto x = random_batch<float>(2, m.config(), rng);
    ForwardCache<float> cache;
    const auto out = m.forward(x, cache);
    const auto grad = m.backward(cache, supervised_loss_grad(out.logits, std::vector<int>{0, 1}));
    const auto before = m.classifier_weights();
    SgdMomentum<float> opt;
    opt.step(m.params(), grad, 0.1);
    EXPECT_NE(before, m.classifier_weights());
}

}  // namespace
}  // namespace pepl
