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

// pepl: data generation, training, evaluation, ablation grids and CAM export.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "pepl/pepl.hpp"

namespace fs = std::filesystem;
using namespace pepl;

namespace {

// Resolution order for the dataset directory: flag, config file, PEPL_DATA_DIR.
std::string resolve_data_dir(const std::string& flag, const std::string& from_config) {
    if (!flag.empty()) return flag;
    if (!from_config.empty()) return from_config;
    if (const char* env = std::getenv("PEPL_DATA_DIR"); env && *env) return env;
    throw Error("no dataset directory: pass --data-dir, set data.dir in the config, or export PEPL_DATA_DIR");
}

LoadedDataset load_data(const std::string& dir) {
    require(fs::is_directory(dir), "dataset directory " + dir + " does not exist (run `pepl gen-data` first)");
    return load_dataset(dir);
}

std::vector<std::uint64_t> parse_uints(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& p : split_list(s)) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(p, &used);
        } catch (...) {
            used = 0;
        }
        require(used == p.size() && p.front() != '-', "not a nonnegative integer: '" + p + "'");
        out.push_back(v);
    }
    require(!out.empty(), "empty integer list");
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> out;
    for (const auto& p : split_list(s)) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(p, &used);
        } catch (...) {
            used = 0;
        }
        require(used == p.size(), "not a number: '" + p + "'");
        out.push_back(v);
    }
    require(!out.empty(), "empty number list");
    return out;
}

// ---- shared run-config flags -------------------------------------------------------

struct RunFlags {
    std::string config_path;
    std::string method;
    std::string data_dir;
    std::string out_dir;
    std::vector<std::string> sets;
    std::optional<double> label_fraction;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> epochs;
    std::optional<std::uint64_t> max_steps;

    void attach(CLI::App* app, bool with_method_and_seed) {
        app->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
        app->add_option("--data-dir", data_dir, "dataset directory (default: data.dir, then $PEPL_DATA_DIR)");
        app->add_option("--out", out_dir, "output directory");
        app->add_option("--set", sets, "override any config key, e.g. --set lr.initial=0.05")->take_all();
        app->add_option("--epochs", epochs, "number of epochs");
        app->add_option("--max-steps", max_steps, "stop after this many global steps (resumable)");
        if (with_method_and_seed) {
            app->add_option("--method", method, "pepl | supervised_only | pseudo_label_fixed | area_mix");
            app->add_option("--label-fraction", label_fraction, "fraction of the train split that keeps labels");
            app->add_option("--seed", seed, "training seed");
        }
    }

    /// Defaults < dataset manifest split < config file < --set < dedicated flags.
    RunConfig resolve(std::string* data_dir_out) const {
        KeyValueConfig kv;
        if (!config_path.empty()) kv = KeyValueConfig::load(config_path);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            require(eq != std::string::npos && eq > 0, "--set expects key=value, got '" + s + "'");
            kv.set(s.substr(0, eq), s.substr(eq + 1));
        }
        const std::string dir = resolve_data_dir(data_dir, kv.get_string("data.dir", ""));
        *data_dir_out = dir;

        RunConfig base;
        if (fs::exists(fs::path(dir) / kManifestName)) {
            const auto m = nlohmann::json::parse(std::ifstream(fs::path(dir) / kManifestName));
            const auto& sp = m.at("split");
            base.label_fraction = sp.at("label_fraction").get<double>();
            base.test_fraction = sp.at("test_fraction").get<double>();
            base.split_seed = sp.at("seed").get<std::uint64_t>();
        }
        RunConfig c = RunConfig::from_kv(kv, base);
        c.data_dir = dir;
        if (!method.empty()) c.method = parse_method(method);
        if (label_fraction) c.label_fraction = *label_fraction;
        if (seed) c.seed = *seed;
        if (epochs) c.epochs = *epochs;
        if (max_steps) c.max_steps = *max_steps;
        if (!out_dir.empty()) c.out_dir = out_dir;
        c.validate();
        return c;
    }
};

void echo_config(const RunConfig& c) {
    std::cout << "# effective config\n" << c.to_kv().dump() << std::flush;
}

// ---- gen-data ---------------------------------------------------------------------

struct GenDataFlags {
    SyntheticSpec spec;
    SplitSpec split;
    std::string out;
    bool force = false;
};

int run_gen_data(const GenDataFlags& f) {
    require(!f.out.empty(), "--out is required");
    if (fs::exists(f.out) && !fs::is_empty(f.out)) {
        require(f.force, "output directory " + f.out + " exists and is not empty (use --force to overwrite)");
        fs::remove(fs::path(f.out) / kManifestName);
        fs::remove(fs::path(f.out) / kImagesName);
    }
    const auto ds = generate(f.spec);
    const auto sp = split(ds, f.split);
    save_dataset(f.out, ds, sp, f.split);
    std::cout << "wrote " << ds.count << " images (" << ds.num_classes() << " classes) to " << f.out << ": "
              << sp.labeled.size() << " labeled, " << sp.unlabeled.size() << " unlabeled, " << sp.test.size()
              << " test\n";
    return 0;
}

// ---- train ------------------------------------------------------------------------

void write_mixed_dump(const fs::path& dir, std::size_t k, const Planes<float>& a, const Planes<float>& b,
                      const Planes<float>& mixed, const HybridLabel& l, std::ofstream& record) {
    const std::string stem = "mix_" + std::to_string(k);
    write_png(dir / (stem + "_a.png"), side_by_side({to_rgb(a)}, 4));
    write_png(dir / (stem + "_b.png"), side_by_side({to_rgb(b)}, 4));
    write_png(dir / (stem + "_mixed.png"), side_by_side({to_rgb(mixed)}, 4));
    record << stem << "," << l.class_a << "," << format_double(l.rho_a) << "," << l.class_b << ","
           << format_double(l.rho_b) << "\n";
}

int run_train(const RunFlags& f, const std::string& resume_path, std::size_t dump_mixed) {
    std::string dir;
    RunConfig cfg = f.resolve(&dir);
    require(!cfg.out_dir.empty(), "--out (or run.out_dir) is required");
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        require(resume->model_config.widths == cfg.widths, "resume checkpoint was trained with a different model");
    }
    const auto data = load_data(dir);
    echo_config(cfg);

    TrainHooks hooks;
    std::ofstream record;
    std::size_t dumped = 0;
    const fs::path dump_dir = fs::path(cfg.out_dir) / "mixed";
    if (dump_mixed > 0) {
        fs::create_directories(dump_dir);
        record.open(dump_dir / "labels.csv");
        record << "sample,y_a,rho_a,y_b,rho_b\n";
        hooks.on_mixed = [&](const Planes<float>& a, const Planes<float>& b, const Planes<float>& m,
                             const HybridLabel& l) {
            if (dumped < dump_mixed) write_mixed_dump(dump_dir, dumped++, a, b, m, l, record);
        };
    }
    hooks.on_eval = [](std::size_t epoch, std::uint64_t step, double acc) {
        std::printf("epoch %3zu  step %6llu  test_acc %.4f\n", epoch, static_cast<unsigned long long>(step), acc);
        std::fflush(stdout);
    };
    const auto s = train(cfg, data.data, resume, hooks);
    std::cout << s.to_json().dump() << "\n";
    return 0;
}

// ---- eval -------------------------------------------------------------------------

int run_eval(const std::string& ck_path, const std::string& data_flag) {
    require(!ck_path.empty(), "--checkpoint is required");
    const auto ck = load_checkpoint(ck_path);
    const auto data = load_data(resolve_data_dir(data_flag, ck.config.data_dir));
    const double acc = evaluate(ck, data.data);
    std::printf("accuracy %.6f\n", acc);
    std::cout << "accuracy_exact " << format_double(acc) << "\n";
    return 0;
}

// ---- ablate -----------------------------------------------------------------------

std::vector<RunSummary> run_children(const std::vector<RunConfig>& cfgs, const Dataset& ds, std::size_t jobs) {
    std::vector<RunSummary> out(cfgs.size());
    std::size_t next = 0, running = 0;
    std::map<pid_t, std::size_t> live;
    auto reap = [&] {
        int status = 0;
        const pid_t pid = ::wait(&status);
        require(pid > 0, "wait() failed");
        const auto k = live.at(pid);
        live.erase(pid);
        --running;
        require(WIFEXITED(status) && WEXITSTATUS(status) == 0,
                "ablation run " + cfgs[k].out_dir + " failed (see its output directory)");
        out[k] = RunSummary::from_json(nlohmann::json::parse(std::ifstream(fs::path(cfgs[k].out_dir) / "summary.json")));
    };
    while (next < cfgs.size() || running > 0) {
        if (next < cfgs.size() && running < jobs) {
            std::fflush(nullptr);
            const pid_t pid = ::fork();
            require(pid >= 0, "fork() failed");
            if (pid == 0) {
                int code = 0;
                try {
                    train(cfgs[next], ds);
                } catch (const std::exception& e) {
                    std::fprintf(stderr, "pepl: %s\n", e.what());
                    code = 1;
                }
                std::fflush(nullptr);
                ::_exit(code);
            }
            live[pid] = next++;
            ++running;
        } else {
            reap();
        }
    }
    return out;
}

int run_ablate(const RunFlags& f, const std::string& methods, const std::string& fractions, const std::string& seeds,
               std::size_t jobs) {
    std::string dir;
    RunConfig base = f.resolve(&dir);
    std::vector<Method> ms;
    for (const auto& m : split_list(methods)) ms.push_back(parse_method(m));
    require(!ms.empty(), "--methods is empty");
    const auto fs_ = parse_doubles(fractions);
    const auto ss = parse_uints(seeds);
    const auto data = load_data(dir);
    if (jobs > 1) require(!base.out_dir.empty(), "--jobs > 1 needs --out so runs can report back");
    echo_config(base);
    if (!base.out_dir.empty()) {
        fs::create_directories(base.out_dir);
        std::ofstream(fs::path(base.out_dir) / "config.txt") << base.to_kv().dump();
    }

    auto report = [](const RunSummary& s) {
        std::printf("%-20s lf=%-5s seed=%-3llu final=%.4f best=%.4f (%.1fs)\n", s.method.c_str(),
                    format_double(s.label_fraction).c_str(), static_cast<unsigned long long>(s.seed),
                    s.final_accuracy, s.best_accuracy, s.seconds);
        std::fflush(stdout);
    };
    AblationTable table;
    if (jobs <= 1) {
        table = run_ablation(base, data.data, ms, fs_, ss, report);
    } else {
        auto runs = run_children(ablation_configs(base, ms, fs_, ss), data.data, jobs);
        for (const auto& r : runs) report(r);
        table = tabulate_ablation(ms, fs_, ss, std::move(runs), base.out_dir);
    }
    std::cout << "\n" << table.to_text();
    return 0;
}

// ---- viz-cam ----------------------------------------------------------------------

int run_viz_cam(const std::string& ck_path, const std::string& data_flag, const std::string& ids_s,
                std::string out_dir) {
    require(!ck_path.empty(), "--checkpoint is required");
    const auto ck = load_checkpoint(ck_path);
    const auto data = load_data(resolve_data_dir(data_flag, ck.config.data_dir));
    const Dataset& ds = data.data;
    require(ck.model_config.num_classes == ds.num_classes(), "checkpoint and dataset disagree on the class count");
    const auto model = model_from_checkpoint(ck);

    std::vector<std::size_t> ids;
    for (auto v : parse_uints(ids_s)) {
        require(v < ds.count, "unknown image id " + std::to_string(v) + " (dataset has " + std::to_string(ds.count) +
                                  " images)");
        ids.push_back(static_cast<std::size_t>(v));
    }
    if (out_dir.empty()) out_dir = (fs::path(ck_path).parent_path() / "cam").string();
    fs::create_directories(out_dir);

    std::vector<Planes<float>> imgs;
    for (auto id : ids) imgs.push_back(ds.image(id));
    const auto out = model.forward(stack(imgs));
    const auto W = model.classifier_weights();
    for (std::size_t k = 0; k < ids.size(); ++k) {
        auto row = out.logits.row(k);
        const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        const auto map = semantic_map(out.feature_map(k, ids[k]), W, pred, ds.spec.height, ds.spec.width);
        const auto name = "cam_" + std::to_string(ids[k]) + "_pred" + std::to_string(pred) + "_true" +
                          std::to_string(ds.labels[ids[k]]) + ".png";
        write_png(fs::path(out_dir) / name, cam_overlay_panel(imgs[k], map));
        std::cout << (fs::path(out_dir) / name).string() << "\n";
    }
    const auto loc = cam_marker_mass(model, ds, ids);
    std::printf("cam mass in marker box %.4f  box area fraction %.4f  ratio %.2f\n", loc.mean_mass_in_box,
                loc.mean_box_fraction, loc.ratio());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pepl: semi-supervised training with semantic-aware pseudo-label mixing"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "expand all subcommand help");

    GenDataFlags gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic fine-grained dataset and its splits");
    gen_cmd->add_option("--out", gen.out, "dataset directory")->required();
    gen_cmd->add_option("--classes", gen.spec.num_classes, "number of classes")->capture_default_str();
    gen_cmd->add_option("--per-class", gen.spec.per_class, "images per class")->capture_default_str();
    gen_cmd->add_option("--families", gen.spec.num_families, "coarse shape families")->capture_default_str();
    gen_cmd->add_option("--size", gen.spec.height, "image side length")->capture_default_str();
    gen_cmd->add_option("--noise", gen.spec.noise, "pixel noise std")->capture_default_str();
    gen_cmd->add_option("--marker-contrast", gen.spec.marker_contrast, "marker brightness")->capture_default_str();
    gen_cmd->add_option("--marker-min", gen.spec.marker_min, "smallest marker side")->capture_default_str();
    gen_cmd->add_option("--marker-max", gen.spec.marker_max, "largest marker side")->capture_default_str();
    gen_cmd->add_option("--seed", gen.spec.seed, "generator seed")->capture_default_str();
    gen_cmd->add_option("--label-fraction", gen.split.label_fraction, "labeled share of train")->capture_default_str();
    gen_cmd->add_option("--test-fraction", gen.split.test_fraction, "test share")->capture_default_str();
    gen_cmd->add_option("--split-seed", gen.split.seed, "split seed")->capture_default_str();
    gen_cmd->add_flag("--force", gen.force, "overwrite an existing dataset");

    RunFlags train_flags;
    std::string resume;
    std::size_t dump_mixed = 0;
    auto* train_cmd = app.add_subcommand("train", "train one configuration");
    train_flags.attach(train_cmd, true);
    train_cmd->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
    train_cmd->add_option("--dump-mixed", dump_mixed, "write the first N mixed samples (PNG + labels.csv)");

    std::string eval_ck, eval_data;
    auto* eval_cmd = app.add_subcommand("eval", "test accuracy of a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
    eval_cmd->add_option("--data-dir", eval_data, "dataset directory (default: the one it was trained on)");

    RunFlags ablate_flags;
    std::string methods = "pepl,area_mix,supervised_only", fractions = "0.1", seeds = "1,2,3";
    std::size_t jobs = 1;
    auto* ablate_cmd = app.add_subcommand("ablate", "method x label-fraction x seed grid");
    ablate_flags.attach(ablate_cmd, false);
    ablate_cmd->add_option("--methods", methods, "comma-separated methods")->capture_default_str();
    ablate_cmd->add_option("--fractions", fractions, "comma-separated label fractions")->capture_default_str();
    ablate_cmd->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
    ablate_cmd->add_option("--jobs", jobs, "parallel child processes (1 = run in-process)")->capture_default_str();

    std::string viz_ck, viz_data, viz_ids, viz_out;
    auto* viz_cmd = app.add_subcommand("viz-cam", "export CAM overlays for image ids");
    viz_cmd->add_option("--checkpoint", viz_ck, "checkpoint file")->required();
    viz_cmd->add_option("--ids", viz_ids, "comma-separated image ids")->required();
    viz_cmd->add_option("--data-dir", viz_data, "dataset directory");
    viz_cmd->add_option("--out", viz_out, "output directory (default: <checkpoint dir>/cam)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen_cmd->parsed()) {
            gen.spec.width = gen.spec.height;
            return run_gen_data(gen);
        }
        if (train_cmd->parsed()) return run_train(train_flags, resume, dump_mixed);
        if (eval_cmd->parsed()) return run_eval(eval_ck, eval_data);
        if (ablate_cmd->parsed()) return run_ablate(ablate_flags, methods, fractions, seeds, jobs);
        if (viz_cmd->parsed()) return run_viz_cam(viz_ck, viz_data, viz_ids, viz_out);
    } catch (const std::exception& e) {
        std::cerr << "pepl: error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
