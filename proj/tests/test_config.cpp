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

#include <cmath>
#include <limits>
#include <random>

#include "pepl/config.hpp"
#include "pepl/trainer.hpp"

namespace pepl {
namespace {

TEST(KeyValueConfig, SectionsCommentsAndWhitespace) {
    const auto kv = KeyValueConfig::parse(
        "# top comment\n"
        "run.seed = 4\n"
        "\n"
        "[lr]\n"
        "  initial=0.05   # trailing\n"
        "step_epochs = 10\r\n"
        "[ model ]\n"
        "widths = 8, 16\n");
    EXPECT_EQ(kv.get_uint("run.seed", 0), 4u);
    EXPECT_EQ(kv.get_double("lr.initial", 0), 0.05);
    EXPECT_EQ(kv.get_uint("lr.step_epochs", 0), 10u);
    EXPECT_EQ(kv.get_string("model.widths", ""), "8, 16");
    EXPECT_EQ(split_list(kv.get_string("model.widths", "")), (std::vector<std::string>{"8", "16"}));
    EXPECT_EQ(kv.entries().size(), 4u);
}

TEST(KeyValueConfig, Errors) {
    EXPECT_THROW(KeyValueConfig::parse("novalue\n"), Error);
    EXPECT_THROW(KeyValueConfig::parse("[open\n"), Error);
    EXPECT_THROW(KeyValueConfig::parse(" = 3\n"), Error);
    const auto kv = KeyValueConfig::parse("a = x\nb = -3\nc = maybe\n");
    EXPECT_THROW(kv.get_double("a", 0), Error);
    EXPECT_THROW(kv.get_uint("b", 0), Error);
    EXPECT_THROW(kv.get_bool("c", false), Error);
    EXPECT_EQ(kv.get_uint("missing", 9), 9u);
    EXPECT_THROW(KeyValueConfig::load("/nonexistent/pepl.cfg"), Error);
}

TEST(KeyValueConfig, MergeLaterWins) {
    auto a = KeyValueConfig::parse("x = 1\ny = 2\n");
    a.merge(KeyValueConfig::parse("y = 3\nz = 4\n"));
    EXPECT_EQ(a.dump(), "x = 1\ny = 3\nz = 4\n");
}

TEST(FormatDouble, RoundTripsExactly) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int k = 0; k < 1000; ++k) {
        const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
        EXPECT_EQ(std::stod(format_double(v)), v);
    }
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(0.999), "0.999");
}

TEST(RunConfig, DeskDefaults) {
    const RunConfig c;
    EXPECT_EQ(c.method, Method::pepl);
    EXPECT_EQ(c.epochs, 60u);
    EXPECT_EQ(c.lr_step_epochs, 24u);
    EXPECT_EQ(c.lr_tail_epochs, 12u);
    EXPECT_EQ(c.lr_decay, 0.1);
    EXPECT_EQ(c.mu, 7u);
    EXPECT_EQ(c.beta, 0.99);
    EXPECT_EQ(c.momentum, 0.9);
    EXPECT_EQ(c.weight_decay, 0.0);
    EXPECT_EQ(c.warmup_epochs, 0u);
    EXPECT_EQ(c.gamma, 1.0);
    EXPECT_EQ(c.lambda, 1.0);
    EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, KeyValueRoundTrip) {
    RunConfig c;
    c.method = Method::area_mix;
    c.seed = 12;
    c.beta = 0.987654321;
    c.lr = 0.0123;
    c.widths = {8, 12, 16, 20};
    c.out_dir = "/tmp/somewhere";
    const auto back = RunConfig::from_kv(KeyValueConfig::parse(c.to_kv().dump()));
    EXPECT_EQ(back, c);
}

TEST(RunConfig, UnknownKeysAndBadValuesRejected) {
    EXPECT_THROW(RunConfig::from_kv(KeyValueConfig::parse("lr.inital = 0.1\n")), Error);
    EXPECT_THROW(RunConfig::from_kv(KeyValueConfig::parse("run.method = fixmatch\n")), Error);
    auto c = RunConfig::from_kv(KeyValueConfig::parse("threshold.beta = 1.0\n"));
    EXPECT_THROW(c.validate(), Error);
    c = RunConfig::from_kv(KeyValueConfig::parse("batch.mu = 0\n"));
    EXPECT_THROW(c.validate(), Error);
}

TEST(RunConfig, OverlayKeepsBase) {
    RunConfig base;
    base.seed = 77;
    const auto c = RunConfig::from_kv(KeyValueConfig::parse("[run]\nepochs = 5\n"), base);
    EXPECT_EQ(c.seed, 77u);
    EXPECT_EQ(c.epochs, 5u);
}

TEST(Method, NamesRoundTrip) {
    for (auto m : {Method::pepl, Method::supervised_only, Method::pseudo_label_fixed, Method::area_mix})
        EXPECT_EQ(parse_method(to_string(m)), m);
    EXPECT_THROW(parse_method("PEPL!"), Error);
}

}  // namespace
}  // namespace pepl
