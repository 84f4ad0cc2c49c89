// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/checkpoint.hpp"
#include "storm/checks.hpp"
#include "storm/config.hpp"
#include "storm/driving.hpp"
#include "storm/flops.hpp"
#include "storm/opcount.hpp"
#include "storm/teacher.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace storm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;

int fail_usage(const std::string& code, const std::string& detail = "") {
    std::cerr << "error: " << code;
    if (!detail.empty()) std::cerr << ": " << detail;
    std::cerr << '\n';
    return kExitUsage;
}

void emit_resolved(const std::string& out_dir, const RunConfig& cfg) {
    fs::create_directories(out_dir);
    save_config(out_dir + "/resolved.cfg", cfg);
}

int cmd_datagen(const std::string& config_path, const std::string& out_dir) {
    const RunConfig cfg = load_config(config_path);
    if (cfg.dataset_dir.empty()) return fail_usage("bad_config", "dataset_dir not set");
    const std::vector<driving::Scene> scenes = driving::make_dataset(cfg);
    driving::save_dataset(cfg.dataset_dir, scenes);
    if (!out_dir.empty()) emit_resolved(out_dir, cfg);
    std::cout << "wrote " << scenes.size() << " scenes to " << cfg.dataset_dir << '\n';
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    const RunConfig cfg = load_config(config_path);
    if (cfg.dataset_dir.empty() || !fs::exists(cfg.dataset_dir)) {
        return fail_usage("dataset_not_found", cfg.dataset_dir);
    }
    const std::vector<driving::Scene> dataset = driving::load_dataset(cfg.dataset_dir);
    if (dataset.empty()) return fail_usage("dataset_not_found", "no scenes in " + cfg.dataset_dir);

    const teacher::Teacher frozen(cfg.teacher_config(), cfg.embed_dim, cfg.teacher_seed);
    RngState init(cfg.init_seed);
    driving::ModelParams params = driving::ModelParams::init(cfg, init);
    driving::TrainResult result = driving::train(dataset, cfg, frozen, std::move(params));

    emit_resolved(out_dir, cfg);
    std::ofstream csv(out_dir + "/loss.csv");
    driving::write_loss_csv(csv, result.curve);
    save_checkpoint(out_dir + "/checkpoint", result.params);
    std::cout << "trained " << cfg.epochs << " epochs over " << dataset.size()
              << " scenes; final total loss " << result.curve.back().total << '\n';
    return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::vector<std::string>& modes) {
    if (modes.empty()) return fail_usage("no_modes");
    const RunConfig base = load_config(config_path);
    const std::vector<driving::Scene> dataset = driving::make_dataset(base);
    const teacher::Teacher frozen(base.teacher_config(), base.embed_dim, base.teacher_seed);

    emit_resolved(out_dir, base);
    std::ofstream csv(out_dir + "/ablate.csv");
    csv << "mode,final_wp,final_score,final_total,census_scalar_ops\n";
    for (const std::string& mode : modes) {
        RunConfig cfg = base;
        if (mode == "hard" || mode == "soft" || mode == "anchors_only") {
            cfg.merge_mode = mode;
        } else if (mode == "window_on") {
            cfg.predictor_mode = "mixer";
        } else if (mode == "window_off") {
            cfg.predictor_mode = "mixer_no_window";
        } else {
            return fail_usage("unknown_mode", mode);
        }
        RngState init(cfg.init_seed);
        driving::ModelParams params = driving::ModelParams::init(cfg, init);
        driving::TrainResult result = driving::train(dataset, cfg, frozen, std::move(params));

        // census of one main-path forward with the trained parameters
        const Tensor text = driving::make_text_tokens(cfg);
        const Tensor pseudo =
            auxiliary_pass(predictor::FrameStack(dataset[0].tokens), text, frozen).scores;
        OpCounter counter;
        {
            CountScope scope(counter);
            driving::training_step(dataset[0], text, result.params, frozen, cfg,
                                   cfg.temperature_end, nullptr, nullptr, &pseudo);
        }
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%.17g,%.17g,%.17g,%llu\n", mode.c_str(),
                      result.curve.back().wp, result.curve.back().score,
                      result.curve.back().total,
                      static_cast<unsigned long long>(counter.scalar_ops));
        csv << line;
    }
    std::cout << "ablation table written to " << out_dir << "/ablate.csv\n";
    return kExitOk;
}

int cmd_check(const std::string& scope, const std::string& out_dir) {
    const std::vector<checks::CheckResult> results = checks::run_scope(scope);
    checks::print_results(std::cout, results);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream os(out_dir + "/checks.txt");
        checks::print_results(os, results);
    }
    return checks::all_pass(results) ? kExitOk : kExitCheckFailure;
}

int cmd_flops(const std::string& config_path, const std::string& out_dir) {
    const RunConfig cfg = load_config(config_path);
    flops::MixerConfig mixer{cfg.frames, cfg.tokens_per_frame, cfg.embed_dim,
                             cfg.window_radius, cfg.window_dilation};
    const flops::FlopsReport report =
        flops::build_report(mixer, cfg.frames * cfg.tokens_per_frame,
                            cfg.frames * cfg.anchors_per_frame, cfg.teacher_config());
    flops::write_report_json(std::cout, report);
    if (!out_dir.empty()) {
        emit_resolved(out_dir, cfg);
        std::ofstream os(out_dir + "/flops.json");
        flops::write_report_json(os, report);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"supervised token-reduction pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, scope = "all";
    std::vector<std::string> modes;

    CLI::App* train = app.add_subcommand("train", "train on a scene dataset");
    train->add_option("--config", config_path)->required();
    train->add_option("--out", out_dir)->required();

    CLI::App* datagen = app.add_subcommand("datagen", "synthesize a scene dataset");
    datagen->add_option("--config", config_path)->required();
    datagen->add_option("--out", out_dir);

    CLI::App* ablate = app.add_subcommand("ablate", "run ablation modes on shared seeds");
    ablate->add_option("--config", config_path)->required();
    ablate->add_option("--out", out_dir)->required();
    ablate->add_option("--modes", modes, "comma-separated mode list")->delimiter(',');

    CLI::App* check = app.add_subcommand("check", "gradient and invariant suites");
    check->add_option("scope", scope, "numerics|predictor|acm|e2e|all");
    check->add_option("--config", config_path);
    check->add_option("--out", out_dir);

    CLI::App* flops_cmd = app.add_subcommand("flops", "operation-count audit");
    flops_cmd->add_option("--config", config_path)->required();
    flops_cmd->add_option("--out", out_dir);

    try {
        app.parse(argc, argv);
        if (train->parsed()) return cmd_train(config_path, out_dir);
        if (datagen->parsed()) return cmd_datagen(config_path, out_dir);
        if (ablate->parsed()) return cmd_ablate(config_path, out_dir, modes);
        if (check->parsed()) return cmd_check(scope, out_dir);
        if (flops_cmd->parsed()) return cmd_flops(config_path, out_dir);
        return fail_usage("no_subcommand");
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        return fail_usage("bad_config", e.what());
    } catch (const std::exception& e) {
        return fail_usage("internal", e.what());
    }
}
