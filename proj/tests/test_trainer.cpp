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
#include <filesystem>
#include <fstream>
#include <numbers>
#include <cstring>

#include <unistd.h>

#include "oracles.hpp"
#include "pepl/trainer.hpp"

namespace pepl {
namespace {

// 4 classes, 16x16 images, tiny network: each step takes well under a millisecond.
const Dataset& tiny_dataset() {
    static const Dataset ds = [] {
        SyntheticSpec s;
        s.num_classes = 4;
        s.num_families = 2;
        s.per_class = 20;
        s.height = s.width = 16;
        s.marker_min = 3;
        s.marker_max = 5;
        return generate(s);
    }();
    return ds;
}

RunConfig tiny_config(Method m = Method::pepl) {
    RunConfig c;
    c.method = m;
    c.epochs = 6;
    c.lr_step_epochs = 3;
    c.lr_tail_epochs = 2;
    c.batch_size = 4;
    c.mu = 2;
    c.beta = 0.9;
    c.label_fraction = 0.25;
    c.widths = {4, 6};
    return c;
}

Trainer make_trainer(const RunConfig& cfg, std::optional<HiddenLabels> hidden = std::nullopt) {
    auto p = prepare_data(tiny_dataset(), splits_for(tiny_dataset(), cfg));
    return Trainer(cfg, std::move(p.labeled), std::move(p.unlabeled), std::move(p.test), p.num_classes,
                   hidden ? std::move(hidden) : std::optional<HiddenLabels>(std::move(p.hidden)));
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("pepl_trainer_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    return p;
}

TEST(LrSchedule, PaperShapedValues) {
    const auto s = LrSchedule::paper_shaped(1);
    EXPECT_NEAR(lr_at(s, 0, 0), 0.01, 1e-15);
    EXPECT_NEAR(lr_at(s, 79, 0), 0.01, 1e-15);
    EXPECT_NEAR(lr_at(s, 80, 0), 0.001, 1e-15);
    EXPECT_NEAR(lr_at(s, 160, 0), 0.0001, 1e-15);
    // cosine from the 1e-4 floor to 0 across the last 40 epochs
    const double p = 20.0 / 39.0;
    EXPECT_NEAR(lr_at(s, 180, 0), 0.0001 * 0.5 * (1.0 + std::cos(std::numbers::pi * p)), 1e-15);
    EXPECT_EQ(lr_at(s, 199, 0), 0.0);
    EXPECT_THROW(lr_at(s, 200, 0), Error);
}

TEST(LrSchedule, TailMidpointIsHalfTheFloor) {
    LrSchedule s{0.01, 80, 0.1, 40, 200, 1};
    s.total_epochs = 201;  // tail spans an even number of steps: 161..200
    s.tail_epochs = 41;
    EXPECT_NEAR(lr_at(s, 180, 0), 0.5 * lr_at(s, 160, 0), 1e-15);
}

TEST(LrSchedule, DeskDefaultsPositiveUntilTheFinalStep) {
    const RunConfig c;
    const LrSchedule s{c.lr, c.lr_step_epochs, c.lr_decay, c.lr_tail_epochs, c.epochs, 13};
    double prev = 1.0;
    for (std::size_t e = 0; e < s.total_epochs; ++e)
        for (std::size_t k = 0; k < 13; ++k) {
            const double lr = lr_at(s, e, k);
            EXPECT_LE(lr, prev);
            prev = lr;
            if (e + 1 < s.total_epochs || k + 1 < 13) {
                EXPECT_GT(lr, 0.0);
            }
        }
    EXPECT_EQ(lr_at(s, 59, 12), 0.0);
    EXPECT_NEAR(lr_at(s, 0, 0), 0.03, 1e-15);
    EXPECT_NEAR(lr_at(s, 24, 0), 0.003, 1e-15);
}

TEST(Trainer, DeskEpochLength) {
    const Dataset& ds = []() -> const Dataset& {
        static const Dataset d = generate(SyntheticSpec{});
        return d;
    }();
    RunConfig c;
    auto p = prepare_data(ds, splits_for(ds, c));
    Trainer t(c, std::move(p.labeled), std::move(p.unlabeled), std::move(p.test), p.num_classes);
    EXPECT_EQ(t.steps_per_epoch(), 13u);  // ceil(720 / 56) beats ceil(80 / 8)
    EXPECT_EQ(t.total_steps(), 780u);
}

TEST(Trainer, ThresholdStateMatchesReplayOfObservedBatches) {
    auto t = make_trainer(tiny_config());
    std::vector<oracle::Rows> seen;
    TrainHooks h;
    h.on_unlabeled_probs = [&](const PredictionBatch& p) {
        oracle::Rows rows;
        for (std::size_t i = 0; i < p.rows; ++i) rows.emplace_back(p.row(i).begin(), p.row(i).end());
        seen.push_back(rows);
    };
    for (int k = 0; k < 20; ++k) t.train_step(h);
    ASSERT_EQ(seen.size(), 20u);
    const auto ref = oracle::replay_thresholds(4, 0.9, seen);
    EXPECT_EQ(t.thresholds().step, 20u);
    EXPECT_NEAR(t.thresholds().tau_global, ref.tau, 1e-9);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(t.thresholds().class_expect[c], ref.expect[c], 1e-9);
}

TEST(Trainer, HiddenLabelsNeverReachTraining) {
    const auto cfg = tiny_config();
    const auto s = splits_for(tiny_dataset(), cfg);
    std::vector<int> poisoned(s.unlabeled.size());
    for (std::size_t i = 0; i < poisoned.size(); ++i) poisoned[i] = static_cast<int>((i * 7 + 1) % 4);
    auto honest = make_trainer(cfg);
    auto poison = make_trainer(cfg, HiddenLabels(poisoned));
    double acc_h = 0.0, acc_p = 0.0;
    for (int k = 0; k < 15; ++k) {
        const auto a = honest.train_step(), b = poison.train_step();
        if (std::isfinite(a.pseudo_label_acc)) acc_h += a.pseudo_label_acc;
        if (std::isfinite(b.pseudo_label_acc)) acc_p += b.pseudo_label_acc;
    }
    EXPECT_TRUE(std::equal(honest.model().params().begin(), honest.model().params().end(),
                           poison.model().params().begin()));
    EXPECT_NE(acc_h, acc_p);  // the diagnostic did see the different labels
}

TEST(Trainer, EmptySelectionStillSteps) {
    auto cfg = tiny_config(Method::pseudo_label_fixed);
    cfg.fixed_threshold = 0.999999;
    auto t = make_trainer(cfg);
    const std::vector<float> before(t.model().params().begin(), t.model().params().end());
    const auto m = t.train_step();
    EXPECT_EQ(m.selected, 0u);
    EXPECT_EQ(m.loss.l_unsup, 0.0);
    EXPECT_TRUE(std::isnan(m.pseudo_label_acc));
    EXPECT_GT(m.loss.l_sup, 0.0);
    EXPECT_FALSE(std::equal(before.begin(), before.end(), t.model().params().begin()));
}

TEST(Trainer, SupervisedOnlyIgnoresUnlabeledData) {
    auto t = make_trainer(tiny_config(Method::supervised_only));
    bool touched = false;
    TrainHooks h;
    h.on_unlabeled_probs = [&](const PredictionBatch&) { touched = true; };
    for (int k = 0; k < 5; ++k) {
        const auto m = t.train_step(h);
        EXPECT_EQ(m.loss.l_unsup, 0.0);
        EXPECT_EQ(m.selection_rate, 0.0);
    }
    EXPECT_FALSE(touched);
}

TEST(Trainer, MethodsProduceTheirLabelKinds) {
    for (auto m : {Method::pepl, Method::area_mix}) {
        auto t = make_trainer(tiny_config(m));
        double gap = 0.0;
        std::size_t mixed = 0;
        for (int k = 0; k < 12; ++k) {
            const auto s = t.train_step();
            mixed += s.mixed;
            gap += s.mean_rho_area_gap;
            if (s.mixed) {
                EXPECT_LE(s.mixed, s.selected / 2);
            }
        }
        EXPECT_GT(mixed, 0u);
        if (m == Method::area_mix) EXPECT_EQ(gap, 0.0);
        else EXPECT_GT(gap, 0.0);
    }
}

template <typename V>
bool bit_equal(const V& a, const V& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0;
}

TEST(Trainer, ResumeIsBitIdentical) {
    for (auto m : {Method::pepl, Method::area_mix, Method::pseudo_label_fixed}) {
        auto cfg = tiny_config(m);
        auto straight = make_trainer(cfg);
        for (int k = 0; k < 30; ++k) straight.train_step();

        auto first = make_trainer(cfg);
        for (int k = 0; k < 15; ++k) first.train_step();
        const auto path = scratch_dir("resume") / "ck.bin";
        std::filesystem::create_directories(path.parent_path());
        save_checkpoint(path, first.checkpoint());
        auto second = make_trainer(cfg);
        second.restore(load_checkpoint(path));
        for (int k = 0; k < 15; ++k) second.train_step();
        std::filesystem::remove_all(path.parent_path());

        const auto a = straight.checkpoint(), b = second.checkpoint();
        EXPECT_TRUE(bit_equal(a.params, b.params)) << to_string(m);
        EXPECT_TRUE(bit_equal(a.velocity, b.velocity)) << to_string(m);
        EXPECT_EQ(a.thresholds, b.thresholds);
        EXPECT_EQ(a.step, b.step);
    }
}

TEST(Checkpoint, FileRoundTripAndCorruption) {
    auto t = make_trainer(tiny_config());
    for (int k = 0; k < 3; ++k) t.train_step();
    const auto dir = scratch_dir("ckpt");
    std::filesystem::create_directories(dir);
    const auto ck = t.checkpoint();
    save_checkpoint(dir / "a.bin", ck);
    const auto back = load_checkpoint(dir / "a.bin");
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.model_config, ck.model_config);
    EXPECT_TRUE(bit_equal(back.params, ck.params));
    EXPECT_TRUE(bit_equal(back.velocity, ck.velocity));
    EXPECT_EQ(back.thresholds, ck.thresholds);
    EXPECT_EQ(back.step, 3u);

    std::ofstream(dir / "bad.bin") << "NOTACKPT and some more bytes";
    EXPECT_THROW(load_checkpoint(dir / "bad.bin"), Error);
    std::filesystem::copy_file(dir / "a.bin", dir / "short.bin");
    std::filesystem::resize_file(dir / "short.bin", std::filesystem::file_size(dir / "a.bin") - 9);
    EXPECT_THROW(load_checkpoint(dir / "short.bin"), Error);
    EXPECT_THROW(load_checkpoint(dir / "missing.bin"), Error);
    std::filesystem::remove_all(dir);
}

TEST(Train, WritesArtifactsAndEvaluatesConsistently) {
    auto cfg = tiny_config();
    cfg.out_dir = scratch_dir("run").string();
    const auto s = train(cfg, tiny_dataset());
    const std::filesystem::path out(cfg.out_dir);
    for (const char* f : {"config.txt", "metrics.csv", "checkpoint.bin", "summary.json"})
        EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
    EXPECT_EQ(s.steps, 36u);  // 6 epochs x max(ceil(16/4), ceil(48/8))

    std::ifstream csv(out / "metrics.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, kMetricsHeader);
    const auto columns = std::count(line.begin(), line.end(), ',');
    std::size_t steps = 0, evals = 0;
    while (std::getline(csv, line)) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), columns) << line;
        steps += line.rfind("step,", 0) == 0;
        evals += line.rfind("eval,", 0) == 0;
    }
    EXPECT_EQ(steps, 36u);
    EXPECT_EQ(evals, 6u);

    const auto ck = load_checkpoint(out / "checkpoint.bin");
    EXPECT_EQ(evaluate(ck, tiny_dataset()), s.final_accuracy);
    EXPECT_EQ(RunConfig::from_kv(KeyValueConfig::load(out / "config.txt")), cfg);
    std::filesystem::remove_all(out);
}

TEST(Train, MaxStepsThenResumeMatchesFullRun) {
    auto cfg = tiny_config();
    const auto dir = scratch_dir("split");
    cfg.out_dir = (dir / "full").string();
    train(cfg, tiny_dataset());

    auto part = cfg;
    part.out_dir = (dir / "part").string();
    part.max_steps = 10;
    EXPECT_EQ(train(part, tiny_dataset()).steps, 10u);
    auto rest = cfg;
    rest.out_dir = part.out_dir;
    const auto ck = load_checkpoint(dir / "part" / "checkpoint.bin");
    train(rest, tiny_dataset(), ck);

    const auto a = load_checkpoint(dir / "full" / "checkpoint.bin");
    const auto b = load_checkpoint(dir / "part" / "checkpoint.bin");
    EXPECT_TRUE(bit_equal(a.params, b.params));
    std::filesystem::remove_all(dir);
}

TEST(Train, RejectsClassMismatchOnEvaluate) {
    auto t = make_trainer(tiny_config());
    SyntheticSpec other = tiny_dataset().spec;
    other.num_classes = 6;
    other.num_families = 3;
    EXPECT_THROW(evaluate(t.checkpoint(), generate(other)), Error);
}

TEST(Ablation, GridShapeAndReports) {
    auto cfg = tiny_config();
    cfg.epochs = 2;
    cfg.lr_step_epochs = 1;
    cfg.lr_tail_epochs = 1;
    const auto dir = scratch_dir("ablation");
    cfg.out_dir = dir.string();
    std::size_t runs = 0;
    const auto t = run_ablation(cfg, tiny_dataset(), {Method::pepl, Method::supervised_only}, {0.25, 0.5}, {1, 2},
                                [&](const RunSummary&) { ++runs; });
    EXPECT_EQ(runs, 8u);
    ASSERT_EQ(t.cells.size(), 4u);
    EXPECT_EQ(t.at(1, 0).method, Method::supervised_only);
    EXPECT_EQ(t.at(1, 0).label_fraction, 0.25);
    EXPECT_EQ(t.at(0, 1).accuracies.size(), 2u);
    EXPECT_NE(t.to_text().find("supervised_only"), std::string::npos);
    const auto csv = t.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_TRUE(std::filesystem::exists(dir / "ablation.txt"));
    EXPECT_TRUE(std::filesystem::exists(dir / "ablation.csv"));
    std::filesystem::remove_all(dir);
}

TEST(CamLocalization, FractionsAreConsistent) {
    auto t = make_trainer(tiny_config());
    std::vector<std::size_t> ids{0, 1, 2, 3, 4, 5};
    const auto loc = cam_marker_mass(t.model(), tiny_dataset(), ids);
    double frac = 0.0;
    for (auto i : ids) frac += static_cast<double>(tiny_dataset().marker_boxes[i].area()) / 256.0;
    EXPECT_NEAR(loc.mean_box_fraction, frac / 6.0, 1e-12);
    EXPECT_GE(loc.mean_mass_in_box, 0.0);
    EXPECT_LE(loc.mean_mass_in_box, 1.0 + 1e-9);
}

}  // namespace
}  // namespace pepl
