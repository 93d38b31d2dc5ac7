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

// Training loop.
//
// One step:
//   1. draw B labeled and up to mu*B unlabeled images, weak-augment both
//   2. forward the unlabeled batch once; its probabilities update the
//      threshold state and pick pseudo-labels, its tap features give CAMs
//   3. pair the selected images, cut-and-paste a rectangle from b into a and
//      weight the two pseudo-labels by semantic (or area) proportions
//   4. forward labeled + mixed images together, backprop the weighted loss,
//      momentum SGD at the scheduled learning rate
//
// All randomness of step g comes from streams keyed by (seed, g), so a run
// resumed from a checkpoint replays exactly.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pepl/cam_engine.hpp"
#include "pepl/config.hpp"
#include "pepl/datagen.hpp"
#include "pepl/model_zoo.hpp"
#include "pepl/objectives.hpp"
#include "pepl/rng.hpp"
#include "pepl/semantic_mixer.hpp"
#include "pepl/threshold_scheduler.hpp"

namespace pepl {

enum class Method { pepl, supervised_only, pseudo_label_fixed, area_mix };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::pepl: return "pepl";
        case Method::supervised_only: return "supervised_only";
        case Method::pseudo_label_fixed: return "pseudo_label_fixed";
        case Method::area_mix: return "area_mix";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "pepl") return Method::pepl;
    if (s == "supervised_only") return Method::supervised_only;
    if (s == "pseudo_label_fixed") return Method::pseudo_label_fixed;
    if (s == "area_mix") return Method::area_mix;
    throw Error("unknown method '" + s + "' (expected pepl, supervised_only, pseudo_label_fixed, area_mix)");
}

// ---- learning-rate schedule -------------------------------------------------

/// Step decay by `decay` every `step_epochs`, then a cosine tail over the last
/// `tail_epochs` from the decayed value down to exactly 0 at the final step.
struct LrSchedule {
    double initial = 0.03;
    std::size_t step_epochs = 24;
    double decay = 0.1;
    std::size_t tail_epochs = 12;
    std::size_t total_epochs = 60;
    std::size_t steps_per_epoch = 1;

    /// 200 epochs, x0.1 every 80, cosine over the last 40, starting at 0.01.
    static LrSchedule paper_shaped(std::size_t steps_per_epoch) { return {0.01, 80, 0.1, 40, 200, steps_per_epoch}; }

    std::size_t tail_start() const { return total_epochs - std::min(tail_epochs, total_epochs); }
    std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
};

inline double lr_at(const LrSchedule& s, std::size_t epoch, std::size_t step_in_epoch) {
    require(s.steps_per_epoch >= 1 && s.total_epochs >= 1, "schedule needs at least one epoch and step");
    require(epoch < s.total_epochs && step_in_epoch < s.steps_per_epoch, "schedule position outside the run");
    auto decayed = [&](std::size_t e) {
        const std::size_t k = s.step_epochs == 0 ? 0 : e / s.step_epochs;
        return s.initial * std::pow(s.decay, static_cast<double>(k));
    };
    const std::size_t start = s.tail_start();
    if (s.tail_epochs == 0 || epoch < start) return decayed(epoch);
    const double floor = decayed(start);
    const std::size_t g = epoch * s.steps_per_epoch + step_in_epoch;
    const std::size_t g0 = start * s.steps_per_epoch;
    const std::size_t last = s.total_steps() - 1;
    if (last == g0) return 0.0;
    const double progress = static_cast<double>(g - g0) / static_cast<double>(last - g0);
    return floor * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- run configuration --------------------------------------------------------

struct RunConfig {
    Method method = Method::pepl;
    std::uint64_t seed = 1;
    std::size_t epochs = 60;
    std::uint64_t max_steps = 0;  // stop early after this global step count (0 = run to the end)
    std::size_t eval_every = 1;
    std::string out_dir;

    std::string data_dir;
    double label_fraction = 0.1;
    double test_fraction = 0.2;
    std::uint64_t split_seed = 7;

    std::size_t batch_size = 8;
    std::size_t mu = 7;
    double beta = 0.99;
    double fixed_threshold = 0.95;
    double gamma = 1.0;
    double lambda = 1.0;
    std::size_t warmup_epochs = 0;  // linear ramp of lambda from 0 over these epochs

    double lr = 0.03;
    std::size_t lr_step_epochs = 24;
    double lr_decay = 0.1;
    std::size_t lr_tail_epochs = 12;
    double momentum = 0.9;
    double weight_decay = 0.0;

    std::vector<std::size_t> widths{16, 32, 32};

    void validate() const {
        require(batch_size >= 1, "labeled batch size must be positive");
        require(mu >= 1, "unlabeled multiplier mu must be >= 1");
        require(beta >= 0.0 && beta < 1.0, "EMA momentum beta must lie in [0, 1)");
        require(gamma >= 0.0 && lambda >= 0.0, "loss weights must be nonnegative");
        require(epochs >= 1, "need at least one epoch");
        require(lr > 0.0, "initial learning rate must be positive");
        require(lr_decay > 0.0, "learning-rate decay factor must be positive");
        require(lr_tail_epochs <= epochs, "cosine tail longer than the run");
        require(momentum >= 0.0 && momentum < 1.0, "SGD momentum must lie in [0, 1)");
        require(weight_decay >= 0.0, "weight decay must be nonnegative");
        require(fixed_threshold > 0.0 && fixed_threshold < 1.0, "fixed threshold must lie in (0, 1)");
        require(eval_every >= 1, "eval_every must be >= 1");
        require(!widths.empty(), "model needs at least one stage");
    }

    KeyValueConfig to_kv() const {
        KeyValueConfig kv;
        kv.set("run.method", to_string(method));
        kv.set("run.seed", std::to_string(seed));
        kv.set("run.epochs", std::to_string(epochs));
        kv.set("run.max_steps", std::to_string(max_steps));
        kv.set("run.eval_every", std::to_string(eval_every));
        kv.set("run.out_dir", out_dir);
        kv.set("data.dir", data_dir);
        kv.set("data.label_fraction", format_double(label_fraction));
        kv.set("data.test_fraction", format_double(test_fraction));
        kv.set("data.split_seed", std::to_string(split_seed));
        kv.set("batch.labeled", std::to_string(batch_size));
        kv.set("batch.mu", std::to_string(mu));
        kv.set("threshold.beta", format_double(beta));
        kv.set("threshold.fixed", format_double(fixed_threshold));
        kv.set("loss.gamma", format_double(gamma));
        kv.set("loss.lambda", format_double(lambda));
        kv.set("loss.warmup_epochs", std::to_string(warmup_epochs));
        kv.set("lr.initial", format_double(lr));
        kv.set("lr.step_epochs", std::to_string(lr_step_epochs));
        kv.set("lr.decay", format_double(lr_decay));
        kv.set("lr.tail_epochs", std::to_string(lr_tail_epochs));
        kv.set("optim.momentum", format_double(momentum));
        kv.set("optim.weight_decay", format_double(weight_decay));
        std::string w;
        for (std::size_t i = 0; i < widths.size(); ++i) w += (i ? "," : "") + std::to_string(widths[i]);
        kv.set("model.widths", w);
        return kv;
    }

    static RunConfig from_kv(const KeyValueConfig& kv) { return from_kv(kv, RunConfig{}); }

    static RunConfig from_kv(const KeyValueConfig& kv, const RunConfig& base) {
        static const std::vector<std::string> known{
            "run.method",     "run.seed",           "run.epochs",         "run.max_steps",   "run.eval_every",
            "run.out_dir",    "data.dir",           "data.label_fraction", "data.test_fraction", "data.split_seed",
            "batch.labeled",  "batch.mu",           "threshold.beta",     "threshold.fixed", "loss.gamma",
            "loss.lambda",    "loss.warmup_epochs", "lr.initial",         "lr.step_epochs",     "lr.decay",        "lr.tail_epochs",
            "optim.momentum", "optim.weight_decay", "model.widths"};
        for (const auto& [k, v] : kv.entries())
            require(std::find(known.begin(), known.end(), k) != known.end(), "unknown config key '" + k + "'");
        RunConfig c = base;
        c.method = parse_method(kv.get_string("run.method", to_string(c.method)));
        c.seed = kv.get_uint("run.seed", c.seed);
        c.epochs = kv.get_uint("run.epochs", c.epochs);
        c.max_steps = kv.get_uint("run.max_steps", c.max_steps);
        c.eval_every = kv.get_uint("run.eval_every", c.eval_every);
        c.out_dir = kv.get_string("run.out_dir", c.out_dir);
        c.data_dir = kv.get_string("data.dir", c.data_dir);
        c.label_fraction = kv.get_double("data.label_fraction", c.label_fraction);
        c.test_fraction = kv.get_double("data.test_fraction", c.test_fraction);
        c.split_seed = kv.get_uint("data.split_seed", c.split_seed);
        c.batch_size = kv.get_uint("batch.labeled", c.batch_size);
        c.mu = kv.get_uint("batch.mu", c.mu);
        c.beta = kv.get_double("threshold.beta", c.beta);
        c.fixed_threshold = kv.get_double("threshold.fixed", c.fixed_threshold);
        c.gamma = kv.get_double("loss.gamma", c.gamma);
        c.lambda = kv.get_double("loss.lambda", c.lambda);
        c.warmup_epochs = kv.get_uint("loss.warmup_epochs", c.warmup_epochs);
        c.lr = kv.get_double("lr.initial", c.lr);
        c.lr_step_epochs = kv.get_uint("lr.step_epochs", c.lr_step_epochs);
        c.lr_decay = kv.get_double("lr.decay", c.lr_decay);
        c.lr_tail_epochs = kv.get_uint("lr.tail_epochs", c.lr_tail_epochs);
        c.momentum = kv.get_double("optim.momentum", c.momentum);
        c.weight_decay = kv.get_double("optim.weight_decay", c.weight_decay);
        if (kv.has("model.widths")) {
            c.widths.clear();
            for (const auto& p : split_list(kv.get_string("model.widths", "")))
                c.widths.push_back(static_cast<std::size_t>(std::stoul(p)));
        }
        return c;
    }

    bool operator==(const RunConfig&) const = default;
};

// ---- data pools ---------------------------------------------------------------

struct LabeledPool {
    std::vector<Planes<float>> images;
    std::vector<int> labels;
    std::size_t size() const { return images.size(); }
};

/// Images only: the training path has no way to reach the true labels.
struct UnlabeledPool {
    std::vector<Planes<float>> images;
    std::size_t size() const { return images.size(); }
};

/// True labels of the unlabeled pool, consulted only for the pseudo-label
/// accuracy diagnostic after selection has been made.
class HiddenLabels {
public:
    explicit HiddenLabels(std::vector<int> labels) : labels_(std::move(labels)) {}

    /// NaN when nothing was selected.
    double pseudo_label_accuracy(std::span<const std::size_t> pool_index_of_row,
                                 const PseudoLabelSelection& sel) const {
        if (sel.empty()) return std::numeric_limits<double>::quiet_NaN();
        std::size_t hits = 0;
        for (std::size_t k = 0; k < sel.size(); ++k)
            hits += labels_.at(pool_index_of_row[sel.selected_indices[k]]) == sel.labels[k];
        return static_cast<double>(hits) / static_cast<double>(sel.size());
    }

private:
    std::vector<int> labels_;
};

inline LabeledPool make_labeled_pool(const Dataset& ds, std::span<const std::size_t> ids) {
    LabeledPool p;
    for (auto i : ids) {
        p.images.push_back(ds.image(i));
        p.labels.push_back(ds.labels[i]);
    }
    return p;
}

inline UnlabeledPool make_unlabeled_pool(const Dataset& ds, std::span<const std::size_t> ids) {
    UnlabeledPool p;
    for (auto i : ids) p.images.push_back(ds.image(i));
    return p;
}

inline HiddenLabels make_hidden_labels(const Dataset& ds, std::span<const std::size_t> ids) {
    std::vector<int> y;
    for (auto i : ids) y.push_back(ds.labels[i]);
    return HiddenLabels(std::move(y));
}

inline Tensor4<float> stack(std::span<const Planes<float>> images) {
    require(!images.empty(), "cannot stack an empty image list");
    const auto& f = images.front();
    Tensor4<float> t(images.size(), f.c, f.h, f.w);
    for (std::size_t i = 0; i < images.size(); ++i) {
        require(images[i].same_shape(f), "images in a batch must share a shape");
        std::copy(images[i].data.begin(), images[i].data.end(), t.sample(i));
    }
    return t;
}

// ---- metrics -------------------------------------------------------------------

struct StepMetrics {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;
    std::size_t unlabeled_count = 0;
    std::size_t selected = 0;
    std::size_t mixed = 0;
    double selection_rate = 0.0;
    double mean_rho_a = 0.0;
    double mean_rho_b = 0.0;
    double mean_rho_area_gap = 0.0;  // mean |rho_a - (1 - f)| over mixed samples
    double pseudo_label_acc = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kMetricsHeader =
    "kind,step,epoch,lr,l_sup,l_unsup,l_total,selection_rate,mean_rho_a,mean_rho_b,mean_rho_area_gap,"
    "pseudo_label_acc,test_acc";

inline std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : std::string("nan"); }

inline std::string metrics_csv_row(const StepMetrics& m) {
    return "step," + std::to_string(m.step) + "," + std::to_string(m.epoch) + "," + csv_number(m.lr) + "," +
           csv_number(m.loss.l_sup) + "," + csv_number(m.loss.l_unsup) + "," + csv_number(m.loss.l_total) + "," +
           csv_number(m.selection_rate) + "," + csv_number(m.mean_rho_a) + "," + csv_number(m.mean_rho_b) + "," +
           csv_number(m.mean_rho_area_gap) + "," + csv_number(m.pseudo_label_acc) + ",";
}

inline std::string eval_csv_row(std::uint64_t step, std::size_t epoch, double acc) {
    return "eval," + std::to_string(step) + "," + std::to_string(epoch) + ",,,,,,,,,," + csv_number(acc);
}

struct TrainHooks {
    std::function<void(const PredictionBatch&)> on_unlabeled_probs;
    std::function<void(const StepMetrics&)> on_step;
    std::function<void(std::size_t epoch, std::uint64_t step, double acc)> on_eval;
    /// Each mixed sample as built: (image a, image b, mixed image, label).
    std::function<void(const Planes<float>&, const Planes<float>&, const Planes<float>&, const HybridLabel&)> on_mixed;
};

// ---- checkpoint ------------------------------------------------------------------

struct Checkpoint {
    RunConfig config;
    ToyBackboneConfig model_config;
    std::vector<float> params;
    std::vector<float> velocity;
    ThresholdState thresholds;
    std::uint64_t step = 0;
    double best_acc = -1.0;
    std::size_t best_epoch = 0;
    double last_acc = -1.0;
};

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'P', 'E', 'P', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename V>
void write_pod(std::ostream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    require(static_cast<bool>(in), "checkpoint is truncated");
    return v;
}

template <typename V>
void write_vec(std::ostream& out, const std::vector<V>& v) {
    write_pod<std::uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(V)));
}

template <typename V>
std::vector<V> read_vec(std::istream& in) {
    const auto n = read_pod<std::uint64_t>(in);
    require(n < (std::uint64_t{1} << 32), "checkpoint vector length is implausible");
    std::vector<V> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(V)));
    require(static_cast<bool>(in), "checkpoint is truncated");
    return v;
}

}  // namespace detail

/// Binary layout: magic, version, JSON header (config, model config, counters),
/// then raw parameter, velocity and threshold-state arrays at full precision.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    nlohmann::json header;
    header["config"] = ck.config.to_kv().dump();
    header["model"] = {{"in_channels", ck.model_config.in_channels},
                       {"height", ck.model_config.height},
                       {"width", ck.model_config.width},
                       {"widths", ck.model_config.widths},
                       {"num_classes", ck.model_config.num_classes},
                       {"seed", ck.model_config.seed}};
    header["step"] = ck.step;
    header["best_epoch"] = ck.best_epoch;
    header["rng"] = {{"seed", ck.config.seed}, {"next_step", ck.step}};
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write checkpoint " + path.string());
    out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::write_pod(out, detail::kCheckpointVersion);
    detail::write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::write_vec(out, ck.params);
    detail::write_vec(out, ck.velocity);
    detail::write_pod(out, ck.thresholds.step);
    detail::write_pod(out, ck.thresholds.beta);
    detail::write_pod(out, ck.thresholds.tau_global);
    detail::write_vec(out, ck.thresholds.class_expect);
    detail::write_pod(out, ck.step);
    detail::write_pod(out, ck.best_acc);
    detail::write_pod(out, ck.last_acc);
    require(static_cast<bool>(out), "failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    require(in && std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) == 0,
            "not a checkpoint file: " + path.string());
    require(detail::read_pod<std::uint32_t>(in) == detail::kCheckpointVersion, "unsupported checkpoint version");
    const auto len = detail::read_pod<std::uint64_t>(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    require(static_cast<bool>(in), "checkpoint is truncated");
    const auto header = nlohmann::json::parse(text);

    Checkpoint ck;
    ck.config = RunConfig::from_kv(KeyValueConfig::parse(header.at("config").get<std::string>()));
    const auto& m = header.at("model");
    ck.model_config.in_channels = m.at("in_channels").get<std::size_t>();
    ck.model_config.height = m.at("height").get<std::size_t>();
    ck.model_config.width = m.at("width").get<std::size_t>();
    ck.model_config.widths = m.at("widths").get<std::vector<std::size_t>>();
    ck.model_config.num_classes = m.at("num_classes").get<std::size_t>();
    ck.model_config.seed = m.at("seed").get<std::uint64_t>();
    ck.best_epoch = header.at("best_epoch").get<std::size_t>();
    ck.params = detail::read_vec<float>(in);
    ck.velocity = detail::read_vec<float>(in);
    ck.thresholds.step = detail::read_pod<std::uint64_t>(in);
    ck.thresholds.beta = detail::read_pod<double>(in);
    ck.thresholds.tau_global = detail::read_pod<double>(in);
    ck.thresholds.class_expect = detail::read_vec<double>(in);
    ck.step = detail::read_pod<std::uint64_t>(in);
    ck.best_acc = detail::read_pod<double>(in);
    ck.last_acc = detail::read_pod<double>(in);
    return ck;
}

// ---- trainer -------------------------------------------------------------------

/// Top-1 accuracy of `model` on a labeled pool, without augmentation.
template <Backbone Model>
double evaluate_accuracy(const Model& model, const LabeledPool& pool, std::size_t chunk = 100) {
    require(pool.size() > 0, "cannot evaluate on an empty split");
    std::size_t correct = 0;
    for (std::size_t start = 0; start < pool.size(); start += chunk) {
        const std::size_t end = std::min(pool.size(), start + chunk);
        const auto batch = stack(std::span(pool.images).subspan(start, end - start));
        const auto out = model.forward(batch);
        for (std::size_t i = 0; i < out.logits.rows; ++i) {
            auto r = out.logits.row(i);
            const auto pred = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
            require(static_cast<std::size_t>(pool.labels[start + i]) < out.logits.cols,
                    "test label outside the model's class range");
            correct += pred == pool.labels[start + i];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(pool.size());
}

class Trainer {
public:
    using Model = ToyBackbone<float>;

    Trainer(RunConfig cfg, LabeledPool labeled, UnlabeledPool unlabeled, LabeledPool test, std::size_t num_classes,
            std::optional<HiddenLabels> hidden = std::nullopt)
        : cfg_(std::move(cfg)),
          labeled_(std::move(labeled)),
          unlabeled_(std::move(unlabeled)),
          test_(std::move(test)),
          hidden_(std::move(hidden)),
          model_(make_model_config(cfg_, labeled_, num_classes)),
          thresholds_(init_state(num_classes, cfg_.beta)) {
        cfg_.validate();
        require(labeled_.size() > 0, "training needs at least one labeled image");
        const std::size_t by_labeled = (labeled_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
        const std::size_t ub = unlabeled_batch_size();
        const std::size_t by_unlabeled = unlabeled_.size() == 0 ? 0 : (unlabeled_.size() + ub - 1) / ub;
        schedule_ = LrSchedule{cfg_.lr,     cfg_.lr_step_epochs, cfg_.lr_decay, cfg_.lr_tail_epochs,
                               cfg_.epochs, std::max(by_labeled, by_unlabeled)};
    }

    const RunConfig& config() const { return cfg_; }
    const Model& model() const { return model_; }
    Model& model() { return model_; }
    const ThresholdState& thresholds() const { return thresholds_; }
    const LrSchedule& schedule() const { return schedule_; }
    std::uint64_t step() const { return step_; }
    std::uint64_t total_steps() const { return schedule_.total_steps(); }
    std::size_t steps_per_epoch() const { return schedule_.steps_per_epoch; }
    std::size_t unlabeled_batch_size() const { return cfg_.mu * cfg_.batch_size; }
    double best_accuracy() const { return best_acc_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double last_accuracy() const { return last_acc_; }
    bool finished() const { return step_ >= total_steps(); }

    double evaluate() const { return test_.size() ? evaluate_accuracy(model_, test_) : 0.0; }

    /// Runs until the end of the schedule, or until `max_steps` total steps.
    void run(const TrainHooks& hooks = {}) {
        const std::uint64_t stop = cfg_.max_steps ? std::min<std::uint64_t>(cfg_.max_steps, total_steps()) : total_steps();
        while (step_ < stop) {
            const StepMetrics m = train_step(hooks);
            if (hooks.on_step) hooks.on_step(m);
            const std::size_t spe = steps_per_epoch();
            if (step_ % spe == 0) {
                const std::size_t epoch = static_cast<std::size_t>(step_ / spe) - 1;
                if ((epoch + 1) % cfg_.eval_every == 0 || step_ == total_steps()) {
                    last_acc_ = evaluate();
                    if (last_acc_ > best_acc_) {
                        best_acc_ = last_acc_;
                        best_epoch_ = epoch;
                    }
                    if (hooks.on_eval) hooks.on_eval(epoch, step_, last_acc_);
                }
            }
        }
    }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.config = cfg_;
        ck.model_config = model_.config();
        ck.params.assign(model_.params().begin(), model_.params().end());
        ck.velocity = optim_.velocity;
        ck.thresholds = thresholds_;
        ck.step = step_;
        ck.best_acc = best_acc_;
        ck.best_epoch = best_epoch_;
        ck.last_acc = last_acc_;
        return ck;
    }

    void restore(const Checkpoint& ck) {
        require(ck.model_config == model_.config(), "checkpoint model does not match this trainer");
        require(ck.params.size() == model_.num_params(), "checkpoint parameter count mismatch");
        require(ck.thresholds.num_classes() == thresholds_.num_classes(), "checkpoint class count mismatch");
        std::copy(ck.params.begin(), ck.params.end(), model_.params().begin());
        optim_.velocity = ck.velocity;
        thresholds_ = ck.thresholds;
        step_ = ck.step;
        best_acc_ = ck.best_acc;
        best_epoch_ = ck.best_epoch;
        last_acc_ = ck.last_acc;
    }

    /// One optimisation step; exposed for tests.
    StepMetrics train_step(const TrainHooks& hooks = {}) {
        require(!finished(), "training schedule already complete");
        const std::size_t spe = steps_per_epoch();
        const auto epoch = static_cast<std::size_t>(step_ / spe);
        const auto in_epoch = static_cast<std::size_t>(step_ % spe);
        Rng rng = derive_rng(cfg_.seed, {stream::kStep, step_});

        StepMetrics m;
        m.step = step_;
        m.epoch = epoch;
        m.lr = lr_at(schedule_, epoch, in_epoch);

        std::vector<Planes<float>> batch_images;
        std::vector<int> batch_labels;
        for (std::size_t idx : labeled_batch_indices(step_)) {
            batch_images.push_back(weak_augment(labeled_.images[idx], rng));
            batch_labels.push_back(labeled_.labels[idx]);
        }
        const std::size_t n_labeled = batch_images.size();

        std::vector<HybridLabel> hybrid;
        std::vector<double> area_fractions;
        if (cfg_.method != Method::supervised_only && unlabeled_.size() > 0)
            build_unlabeled_part(epoch, in_epoch, rng, hooks, batch_images, hybrid, area_fractions, m);

        const auto batch = stack(batch_images);
        ForwardCache<float> cache;
        const auto out = model_.forward(batch, cache);
        Logits lab(n_labeled, out.logits.cols), mix(hybrid.size(), out.logits.cols);
        std::copy(out.logits.data.begin(), out.logits.data.begin() + static_cast<long>(lab.size()), lab.data.begin());
        std::copy(out.logits.data.begin() + static_cast<long>(lab.size()), out.logits.data.end(), mix.data.begin());

        const double lam = cfg_.method == Method::supervised_only ? 0.0 : cfg_.lambda * lambda_ramp(step_);
        const auto lg = total_loss_with_grad(lab, batch_labels, mix, hybrid, cfg_.gamma, lam);
        m.loss = lg.loss;
        if (!std::isfinite(lg.loss.l_total)) dump_and_abort(m, batch_labels, hybrid);

        Grid<double> dlogits(out.logits.rows, out.logits.cols);
        std::copy(lg.grad_labeled.data.begin(), lg.grad_labeled.data.end(), dlogits.data.begin());
        std::copy(lg.grad_mixed.data.begin(), lg.grad_mixed.data.end(),
                  dlogits.data.begin() + static_cast<long>(lg.grad_labeled.size()));
        const auto grad = model_.backward(cache, dlogits);
        optim_.momentum = cfg_.momentum;
        optim_.weight_decay = cfg_.weight_decay;
        optim_.step(model_.params(), grad, m.lr);

        ++step_;
        return m;
    }

private:
    double lambda_ramp(std::uint64_t g) const {
        const double span = static_cast<double>(cfg_.warmup_epochs * steps_per_epoch());
        return span <= 0.0 ? 1.0 : std::min(1.0, static_cast<double>(g) / span);
    }

    static ToyBackboneConfig make_model_config(const RunConfig& cfg, const LabeledPool& labeled, std::size_t C) {
        require(!labeled.images.empty(), "training needs at least one labeled image");
        ToyBackboneConfig mc;
        mc.in_channels = labeled.images.front().c;
        mc.height = labeled.images.front().h;
        mc.width = labeled.images.front().w;
        mc.widths = cfg.widths;
        mc.num_classes = C;
        mc.seed = derive_rng(cfg.seed, {stream::kModelInit})();
        return mc;
    }

    static std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream_id,
                                                std::uint64_t pass) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        Rng r = derive_rng(seed, {stream_id, pass});
        std::shuffle(p.begin(), p.end(), r);
        return p;
    }

    /// The labeled stream is an endless sequence of reshuffled passes, cut into B-sized batches.
    std::vector<std::size_t> labeled_batch_indices(std::uint64_t g) {
        const std::size_t n = labeled_.size();
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < cfg_.batch_size; ++j) {
            const std::uint64_t pos = g * cfg_.batch_size + j;
            const std::uint64_t pass = pos / n;
            if (pass != labeled_pass_) {
                labeled_perm_ = permutation(n, cfg_.seed, stream::kLabeledOrder, pass);
                labeled_pass_ = pass;
            }
            out.push_back(labeled_perm_[pos % n]);
        }
        return out;
    }

    /// Unlabeled passes are reshuffled and may end in a partial batch.
    std::vector<std::size_t> unlabeled_batch_indices(std::size_t epoch, std::size_t in_epoch) {
        const std::size_t n = unlabeled_.size();
        const std::size_t ub = unlabeled_batch_size();
        const std::size_t per_pass = (n + ub - 1) / ub;
        const std::size_t passes_per_epoch = (steps_per_epoch() + per_pass - 1) / per_pass;
        const std::uint64_t pass = epoch * passes_per_epoch + in_epoch / per_pass;
        if (pass != unlabeled_pass_) {
            unlabeled_perm_ = permutation(n, cfg_.seed, stream::kUnlabeledOrder, pass);
            unlabeled_pass_ = pass;
        }
        const std::size_t b = in_epoch % per_pass;
        const std::size_t end = std::min(n, (b + 1) * ub);
        return {unlabeled_perm_.begin() + static_cast<long>(b * ub), unlabeled_perm_.begin() + static_cast<long>(end)};
    }

    void build_unlabeled_part(std::size_t epoch, std::size_t in_epoch, Rng& rng, const TrainHooks& hooks,
                              std::vector<Planes<float>>& batch_images, std::vector<HybridLabel>& hybrid,
                              std::vector<double>& area_fractions, StepMetrics& m) {
        const auto ids = unlabeled_batch_indices(epoch, in_epoch);
        std::vector<Planes<float>> views;
        views.reserve(ids.size());
        for (std::size_t idx : ids) views.push_back(weak_augment(unlabeled_.images[idx], rng));

        const auto out = model_.forward(stack(views));
        const PredictionBatch probs = softmax_rows(out.logits);
        if (hooks.on_unlabeled_probs) hooks.on_unlabeled_probs(probs);

        PseudoLabelSelection sel;
        if (cfg_.method == Method::pseudo_label_fixed) {
            const std::vector<double> fixed(probs.cols, cfg_.fixed_threshold);
            sel = select_with_thresholds(fixed, probs);
        } else {
            thresholds_ = update(thresholds_, probs);
            sel = select(thresholds_, probs);
        }
        m.unlabeled_count = ids.size();
        m.selected = sel.size();
        m.selection_rate = static_cast<double>(sel.size()) / static_cast<double>(ids.size());
        if (hidden_) m.pseudo_label_acc = hidden_->pseudo_label_accuracy(ids, sel);

        if (cfg_.method == Method::pseudo_label_fixed) {
            for (std::size_t k = 0; k < sel.size(); ++k) {
                batch_images.push_back(views[sel.selected_indices[k]]);
                hybrid.push_back(HybridLabel{sel.labels[k], 1.0, sel.labels[k], 0.0});
            }
            m.mixed = sel.size();
            return;
        }

        std::vector<int> label_of_row(ids.size(), -1);
        for (std::size_t k = 0; k < sel.size(); ++k) label_of_row[sel.selected_indices[k]] = sel.labels[k];

        const auto pairs = pair_batch(sel, rng);
        const std::size_t H = views.front().h, W = views.front().w;
        const auto weights = model_.classifier_weights();
        double sum_a = 0.0, sum_b = 0.0, sum_gap = 0.0;
        for (const auto& [a, b] : pairs) {
            const MixMask mask = sample_mask(H, W, rng);
            const int ya = label_of_row[a], yb = label_of_row[b];
            MixRecipe<float> r;
            if (cfg_.method == Method::area_mix) {
                r.mixed_image = compose(views[a], views[b], mask);
                const auto [ra, rb] = area_proportions(mask);
                r.label = HybridLabel{ya, ra, yb, rb};
            } else {
                const auto map_a = semantic_map(out.feature_map(a, a), weights, ya, H, W);
                const auto map_b = semantic_map(out.feature_map(b, b), weights, yb, H, W);
                r = mix_pair(views[a], views[b], map_a, map_b, ya, yb, mask);
            }
            if (hooks.on_mixed) hooks.on_mixed(views[a], views[b], r.mixed_image, r.label);
            sum_a += r.label.rho_a;
            sum_b += r.label.rho_b;
            sum_gap += std::abs(r.label.rho_a - (1.0 - mask.area_fraction));
            area_fractions.push_back(mask.area_fraction);
            batch_images.push_back(std::move(r.mixed_image));
            hybrid.push_back(r.label);
        }
        m.mixed = pairs.size();
        if (!pairs.empty()) {
            const double n = static_cast<double>(pairs.size());
            m.mean_rho_a = sum_a / n;
            m.mean_rho_b = sum_b / n;
            m.mean_rho_area_gap = sum_gap / n;
        }
    }

    [[noreturn]] void dump_and_abort(const StepMetrics& m, const std::vector<int>& labels,
                                     const std::vector<HybridLabel>& hybrid) const {
        std::string where = "(no output dir)";
        if (!cfg_.out_dir.empty()) {
            const auto path = std::filesystem::path(cfg_.out_dir) / ("nonfinite_step_" + std::to_string(m.step) + ".json");
            nlohmann::json j;
            j["step"] = m.step;
            j["lr"] = m.lr;
            j["l_sup"] = csv_number(m.loss.l_sup);
            j["l_unsup"] = csv_number(m.loss.l_unsup);
            j["labeled_labels"] = labels;
            for (const auto& h : hybrid)
                j["hybrid"].push_back({{"y_a", h.class_a}, {"rho_a", h.rho_a}, {"y_b", h.class_b}, {"rho_b", h.rho_b}});
            std::filesystem::create_directories(cfg_.out_dir);
            std::ofstream(path) << j.dump(1) << '\n';
            where = path.string();
        }
        throw Error("non-finite loss at step " + std::to_string(m.step) + "; batch recipe dumped to " + where);
    }

    RunConfig cfg_;
    LabeledPool labeled_;
    UnlabeledPool unlabeled_;
    LabeledPool test_;
    std::optional<HiddenLabels> hidden_;
    Model model_;
    SgdMomentum<float> optim_;
    ThresholdState thresholds_;
    LrSchedule schedule_;
    std::uint64_t step_ = 0;
    double best_acc_ = -1.0;
    std::size_t best_epoch_ = 0;
    double last_acc_ = -1.0;

    std::uint64_t labeled_pass_ = std::numeric_limits<std::uint64_t>::max();
    std::vector<std::size_t> labeled_perm_;
    std::uint64_t unlabeled_pass_ = std::numeric_limits<std::uint64_t>::max();
    std::vector<std::size_t> unlabeled_perm_;
};

// ---- whole runs ---------------------------------------------------------------

struct RunSummary {
    std::string method;
    std::uint64_t seed = 0;
    double label_fraction = 0.0;
    double final_accuracy = 0.0;
    double best_accuracy = 0.0;
    std::size_t best_epoch = 0;
    std::uint64_t steps = 0;
    double mean_selection_rate = 0.0;
    double mean_rho_a = 0.0;
    double mean_rho_b = 0.0;
    double mean_rho_area_gap = 0.0;
    double mean_pseudo_label_acc = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;

    nlohmann::json to_json() const {
        auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
        return {{"method", method},
                {"seed", seed},
                {"label_fraction", label_fraction},
                {"final_accuracy", final_accuracy},
                {"best_accuracy", best_accuracy},
                {"best_epoch", best_epoch},
                {"steps", steps},
                {"mean_selection_rate", mean_selection_rate},
                {"mean_rho_a", mean_rho_a},
                {"mean_rho_b", mean_rho_b},
                {"mean_rho_area_gap", mean_rho_area_gap},
                {"mean_pseudo_label_acc", num(mean_pseudo_label_acc)},
                {"seconds", seconds}};
    }

    static RunSummary from_json(const nlohmann::json& j) {
        auto num = [&](const char* k) {
            return j.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(k).get<double>();
        };
        RunSummary s;
        s.method = j.at("method").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.label_fraction = num("label_fraction");
        s.final_accuracy = num("final_accuracy");
        s.best_accuracy = num("best_accuracy");
        s.best_epoch = j.at("best_epoch").get<std::size_t>();
        s.steps = j.at("steps").get<std::uint64_t>();
        s.mean_selection_rate = num("mean_selection_rate");
        s.mean_rho_a = num("mean_rho_a");
        s.mean_rho_b = num("mean_rho_b");
        s.mean_rho_area_gap = num("mean_rho_area_gap");
        s.mean_pseudo_label_acc = num("mean_pseudo_label_acc");
        s.seconds = num("seconds");
        return s;
    }
};

struct PreparedData {
    LabeledPool labeled;
    UnlabeledPool unlabeled;
    LabeledPool test;
    HiddenLabels hidden{{}};
    std::size_t num_classes = 0;
};

inline PreparedData prepare_data(const Dataset& ds, const Splits& s) {
    PreparedData p;
    p.labeled = make_labeled_pool(ds, s.labeled);
    p.unlabeled = make_unlabeled_pool(ds, s.unlabeled);
    p.test = make_labeled_pool(ds, s.test);
    p.hidden = make_hidden_labels(ds, s.unlabeled);
    p.num_classes = ds.num_classes();
    return p;
}

inline Splits splits_for(const Dataset& ds, const RunConfig& cfg) {
    return split(ds, SplitSpec{cfg.label_fraction, cfg.test_fraction, true, cfg.split_seed});
}

/// Trains one configuration end to end. When `cfg.out_dir` is set, writes the
/// effective config, the metrics CSV, `checkpoint.bin` and `summary.json`.
/// When `resume` is given, training continues from it and the metrics log is appended.
inline RunSummary train(const RunConfig& cfg, const Dataset& ds, const std::optional<Checkpoint>& resume = std::nullopt,
                        TrainHooks extra = {}) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    PreparedData data = prepare_data(ds, splits_for(ds, cfg));
    Trainer trainer(cfg, std::move(data.labeled), std::move(data.unlabeled), std::move(data.test), data.num_classes,
                    std::move(data.hidden));
    if (resume) trainer.restore(*resume);

    std::ofstream csv;
    const bool to_disk = !cfg.out_dir.empty();
    if (to_disk) {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream(std::filesystem::path(cfg.out_dir) / "config.txt") << cfg.to_kv().dump();
        const auto path = std::filesystem::path(cfg.out_dir) / "metrics.csv";
        const bool fresh = !resume || !std::filesystem::exists(path);
        csv.open(path, fresh ? std::ios::trunc : std::ios::app);
        if (fresh) csv << kMetricsHeader << '\n';
    }

    RunSummary s;
    std::size_t n_steps = 0, n_mix_steps = 0, n_pl = 0;
    double sel = 0.0, ra = 0.0, rb = 0.0, gap = 0.0, pl = 0.0;
    TrainHooks hooks = extra;
    hooks.on_step = [&](const StepMetrics& m) {
        ++n_steps;
        sel += m.selection_rate;
        if (m.mixed > 0) {
            ++n_mix_steps;
            ra += m.mean_rho_a;
            rb += m.mean_rho_b;
            gap += m.mean_rho_area_gap;
        }
        if (std::isfinite(m.pseudo_label_acc)) {
            ++n_pl;
            pl += m.pseudo_label_acc;
        }
        if (csv.is_open()) csv << metrics_csv_row(m) << '\n';
        if (extra.on_step) extra.on_step(m);
    };
    hooks.on_eval = [&](std::size_t epoch, std::uint64_t step, double acc) {
        if (csv.is_open()) csv << eval_csv_row(step, epoch, acc) << '\n';
        if (extra.on_eval) extra.on_eval(epoch, step, acc);
    };
    trainer.run(hooks);

    s.method = to_string(cfg.method);
    s.seed = cfg.seed;
    s.label_fraction = cfg.label_fraction;
    s.final_accuracy = trainer.evaluate();
    s.best_accuracy = std::max(trainer.best_accuracy(), s.final_accuracy);
    s.best_epoch = trainer.best_epoch();
    s.steps = trainer.step();
    if (n_steps) s.mean_selection_rate = sel / static_cast<double>(n_steps);
    if (n_mix_steps) {
        s.mean_rho_a = ra / static_cast<double>(n_mix_steps);
        s.mean_rho_b = rb / static_cast<double>(n_mix_steps);
        s.mean_rho_area_gap = gap / static_cast<double>(n_mix_steps);
    }
    if (n_pl) s.mean_pseudo_label_acc = pl / static_cast<double>(n_pl);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (to_disk) {
        save_checkpoint(std::filesystem::path(cfg.out_dir) / "checkpoint.bin", trainer.checkpoint());
        std::ofstream(std::filesystem::path(cfg.out_dir) / "summary.json") << s.to_json().dump(1) << '\n';
    }
    return s;
}

/// Rebuilds the model stored in a checkpoint.
inline ToyBackbone<float> model_from_checkpoint(const Checkpoint& ck) {
    ToyBackbone<float> m(ck.model_config);
    require(ck.params.size() == m.num_params(), "checkpoint parameter count mismatch");
    std::copy(ck.params.begin(), ck.params.end(), m.params().begin());
    return m;
}

/// Test-split accuracy of a checkpoint on the dataset it was trained with.
inline double evaluate(const Checkpoint& ck, const Dataset& ds) {
    require(ck.model_config.num_classes == ds.num_classes(),
            "checkpoint has " + std::to_string(ck.model_config.num_classes) + " classes, dataset has " +
                std::to_string(ds.num_classes()));
    const auto model = model_from_checkpoint(ck);
    const auto s = splits_for(ds, ck.config);
    return evaluate_accuracy(model, make_labeled_pool(ds, s.test));
}

// ---- ablation grid ------------------------------------------------------------

struct AblationCell {
    Method method = Method::pepl;
    double label_fraction = 0.0;
    std::vector<double> accuracies;  // one per seed, final checkpoint
    std::vector<RunSummary> runs;

    double mean() const {
        return accuracies.empty() ? 0.0
                                  : std::accumulate(accuracies.begin(), accuracies.end(), 0.0) /
                                        static_cast<double>(accuracies.size());
    }
    double stddev() const {
        if (accuracies.size() < 2) return 0.0;
        const double mu = mean();
        double s = 0.0;
        for (double a : accuracies) s += (a - mu) * (a - mu);
        return std::sqrt(s / static_cast<double>(accuracies.size() - 1));
    }
};

struct AblationTable {
    std::vector<Method> methods;
    std::vector<double> fractions;
    std::vector<std::uint64_t> seeds;
    std::vector<AblationCell> cells;  // methods x fractions, row-major

    const AblationCell& at(std::size_t mi, std::size_t fi) const { return cells[mi * fractions.size() + fi]; }

    std::string to_text() const {
        std::string out = "method              ";
        for (double f : fractions) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "  %5.0f%% labels  ", f * 100.0);
            out += buf;
        }
        out += "\n";
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            char name[32];
            std::snprintf(name, sizeof(name), "%-20s", to_string(methods[mi]).c_str());
            out += name;
            for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
                char buf[48];
                std::snprintf(buf, sizeof(buf), "  %6.2f +- %5.2f ", 100.0 * at(mi, fi).mean(),
                              100.0 * at(mi, fi).stddev());
                out += buf;
            }
            out += "\n";
        }
        return out;
    }

    std::string to_csv() const {
        std::string out = "method,label_fraction,mean_accuracy,std_accuracy,seeds,accuracies\n";
        for (const auto& c : cells) {
            std::string accs, sds;
            for (std::size_t k = 0; k < c.accuracies.size(); ++k) {
                accs += (k ? ";" : "") + format_double(c.accuracies[k]);
                sds += (k ? ";" : "") + std::to_string(seeds[k]);
            }
            out += to_string(c.method) + "," + format_double(c.label_fraction) + "," + format_double(c.mean()) + "," +
                   format_double(c.stddev()) + "," + sds + "," + accs + "\n";
        }
        return out;
    }
};

/// One config per (method, label fraction, seed), methods outermost. Each run
/// gets its own output subdirectory when `base.out_dir` is set.
inline std::vector<RunConfig> ablation_configs(const RunConfig& base, const std::vector<Method>& methods,
                                               const std::vector<double>& fractions,
                                               const std::vector<std::uint64_t>& seeds) {
    require(!methods.empty() && !fractions.empty() && !seeds.empty(), "ablation grid must be non-empty");
    std::vector<RunConfig> out;
    for (Method m : methods)
        for (double f : fractions)
            for (auto seed : seeds) {
                RunConfig c = base;
                c.method = m;
                c.label_fraction = f;
                c.seed = seed;
                if (!base.out_dir.empty())
                    c.out_dir = (std::filesystem::path(base.out_dir) /
                                 (to_string(m) + "_lf" + format_double(f) + "_s" + std::to_string(seed)))
                                    .string();
                out.push_back(std::move(c));
            }
    return out;
}

/// Groups run summaries (in `ablation_configs` order) into the comparison table
/// and writes `ablation.txt` / `ablation.csv` when `out_dir` is non-empty.
inline AblationTable tabulate_ablation(const std::vector<Method>& methods, const std::vector<double>& fractions,
                                       const std::vector<std::uint64_t>& seeds, std::vector<RunSummary> runs,
                                       const std::string& out_dir = {}) {
    require(runs.size() == methods.size() * fractions.size() * seeds.size(), "ablation run count does not match grid");
    AblationTable t{methods, fractions, seeds, {}};
    std::size_t k = 0;
    for (Method m : methods)
        for (double f : fractions) {
            AblationCell cell;
            cell.method = m;
            cell.label_fraction = f;
            for (std::size_t s = 0; s < seeds.size(); ++s, ++k) {
                cell.accuracies.push_back(runs[k].final_accuracy);
                cell.runs.push_back(std::move(runs[k]));
            }
            t.cells.push_back(std::move(cell));
        }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream(std::filesystem::path(out_dir) / "ablation.txt") << t.to_text();
        std::ofstream(std::filesystem::path(out_dir) / "ablation.csv") << t.to_csv();
    }
    return t;
}

/// Runs the whole grid sequentially on shared data and schedule.
inline AblationTable run_ablation(const RunConfig& base, const Dataset& ds, const std::vector<Method>& methods,
                                  const std::vector<double>& fractions, const std::vector<std::uint64_t>& seeds,
                                  const std::function<void(const RunSummary&)>& on_run = {}) {
    std::vector<RunSummary> runs;
    for (const auto& c : ablation_configs(base, methods, fractions, seeds)) {
        runs.push_back(train(c, ds));
        if (on_run) on_run(runs.back());
    }
    return tabulate_ablation(methods, fractions, seeds, std::move(runs), base.out_dir);
}

// ---- CAM localisation diagnostic --------------------------------------------------

struct CamLocalization {
    double mean_mass_in_box = 0.0;
    double mean_box_fraction = 0.0;
    double ratio() const { return mean_box_fraction > 0 ? mean_mass_in_box / mean_box_fraction : 0.0; }
};

/// Average semantic-map mass inside each image's marker box (CAM of the true
/// class), compared with the average box area fraction.
template <Backbone Model>
CamLocalization cam_marker_mass(const Model& model, const Dataset& ds, std::span<const std::size_t> ids) {
    require(!ids.empty(), "need at least one image");
    CamLocalization out;
    const auto weights = model.classifier_weights();
    const std::size_t H = ds.spec.height, W = ds.spec.width;
    for (std::size_t start = 0; start < ids.size(); start += 100) {
        const std::size_t end = std::min(ids.size(), start + 100);
        std::vector<Planes<float>> imgs;
        for (std::size_t k = start; k < end; ++k) imgs.push_back(ds.image(ids[k]));
        const auto fw = model.forward(stack(imgs));
        for (std::size_t k = start; k < end; ++k) {
            const auto id = ids[k];
            const auto s = semantic_map(fw.feature_map(k - start, id), weights, ds.labels[id], H, W);
            const Box& b = ds.marker_boxes[id];
            double mass = 0.0;
            for (std::size_t y = b.y0; y < b.y1; ++y)
                for (std::size_t x = b.x0; x < b.x1; ++x) mass += s.map(y, x);
            out.mean_mass_in_box += mass;
            out.mean_box_fraction += static_cast<double>(b.area()) / static_cast<double>(H * W);
        }
    }
    out.mean_mass_in_box /= static_cast<double>(ids.size());
    out.mean_box_fraction /= static_cast<double>(ids.size());
    return out;
}

}  // namespace pepl
