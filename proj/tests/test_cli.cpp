// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

#ifndef STORM_CLI_PATH
#error "STORM_CLI_PATH must point at the storm binary"
#endif

const char* kCli = STORM_CLI_PATH;

struct RunOutcome {
    int exit_code = -1;
    std::string out;
    std::string err;
};

RunOutcome run_cli(const std::string& args) {
    const std::string out_file = "cli_stdout.tmp";
    const std::string err_file = "cli_stderr.tmp";
    const std::string cmd =
        std::string(kCli) + " " + args + " >" + out_file + " 2>" + err_file;
    const int raw = std::system(cmd.c_str());
    RunOutcome outcome;
    outcome.exit_code = WEXITSTATUS(raw);
    std::ifstream o(out_file), e(err_file);
    std::stringstream so, se;
    so << o.rdbuf();
    se << e.rdbuf();
    outcome.out = so.str();
    outcome.err = se.str();
    fs::remove(out_file);
    fs::remove(err_file);
    return outcome;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

//! Small config that trains in a couple of seconds.
void write_tiny_config(const std::string& path, const std::string& dataset_dir) {
    std::ofstream os(path);
    os << "frames = 3\n"
          "tokens_per_frame = 6\n"
          "embed_dim = 8\n"
          "waypoint_horizon = 3\n"
          "window_radius = 1\n"
          "window_dilation = 1\n"
          "mixer_blocks = 1\n"
          "anchors_per_frame = 2\n"
          "head_dim = 4\n"
          "lambda = 10\n"
          "epochs = 2\n"
          "scenes = 4\n"
          "salient_per_frame = 2\n"
          "text_tokens = 2\n"
          "head_hidden = 8\n"
          "teacher_depth = 1\n"
          "teacher_heads = 2\n"
          "teacher_width = 16\n"
          "teacher_seed = 4\n"
       << "dataset_dir = " << dataset_dir << "\n";
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const {
        return (sub.empty() ? path : path / sub).string();
    }
};

} // namespace

TEST_CASE("train writes loss curve, checkpoint, and resolved config") {
    TempDir dir("cli_train_tmp");
    write_tiny_config(dir.str("run.cfg"), dir.str("data"));

    const RunOutcome gen = run_cli("datagen --config " + dir.str("run.cfg"));
    REQUIRE(gen.exit_code == 0);
    CHECK(fs::exists(dir.str("data") + "/scene_0000.tnsr"));
    CHECK(fs::exists(dir.str("data") + "/scene_0003.json"));

    const RunOutcome train =
        run_cli("train --config " + dir.str("run.cfg") + " --out " + dir.str("out1"));
    REQUIRE(train.exit_code == 0);
    CHECK(fs::exists(dir.str("out1") + "/loss.csv"));
    CHECK(fs::exists(dir.str("out1") + "/resolved.cfg"));
    CHECK(fs::exists(dir.str("out1") + "/checkpoint/manifest.json"));

    const std::string csv = slurp(dir.str("out1") + "/loss.csv");
    CHECK(csv.rfind("epoch,wp,score,total\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 epochs

    // identical reruns produce identical bytes
    const RunOutcome again =
        run_cli("train --config " + dir.str("run.cfg") + " --out " + dir.str("out2"));
    REQUIRE(again.exit_code == 0);
    CHECK(slurp(dir.str("out2") + "/loss.csv") == csv);

    // replay from the emitted resolved config reproduces the run bit for bit
    const RunOutcome replay = run_cli("train --config " + dir.str("out1") +
                                      "/resolved.cfg --out " + dir.str("out3"));
    REQUIRE(replay.exit_code == 0);
    CHECK(slurp(dir.str("out3") + "/loss.csv") == csv);
}

TEST_CASE("train without a dataset fails with a parsable error") {
    TempDir dir("cli_nodata_tmp");
    write_tiny_config(dir.str("run.cfg"), dir.str("missing_data"));
    const RunOutcome train =
        run_cli("train --config " + dir.str("run.cfg") + " --out " + dir.str("out"));
    CHECK(train.exit_code == 2);
    CHECK(train.err.find("error: dataset_not_found") != std::string::npos);
}

TEST_CASE("malformed config exits 2") {
    TempDir dir("cli_badcfg_tmp");
    {
        std::ofstream os(dir.str("bad.cfg"));
        os << "frames = not_a_number\n";
    }
    const RunOutcome r =
        run_cli("flops --config " + dir.str("bad.cfg") + " --out " + dir.str("out"));
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("error: bad_config") != std::string::npos);

    {
        std::ofstream os(dir.str("unknown.cfg"));
        os << "no_such_key = 3\n";
    }
    const RunOutcome u =
        run_cli("flops --config " + dir.str("unknown.cfg") + " --out " + dir.str("out"));
    CHECK(u.exit_code == 2);
}

TEST_CASE("ablate emits one CSV row per mode and rejects bad mode lists") {
    TempDir dir("cli_ablate_tmp");
    write_tiny_config(dir.str("run.cfg"), dir.str("data"));

    const RunOutcome r = run_cli("ablate --config " + dir.str("run.cfg") + " --out " +
                                 dir.str("out") + " --modes hard,soft,anchors_only");
    REQUIRE(r.exit_code == 0);
    const std::string csv = slurp(dir.str("out") + "/ablate.csv");
    CHECK(csv.rfind("mode,final_wp,final_score,final_total,census_scalar_ops\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 modes
    CHECK(csv.find("hard,") != std::string::npos);
    CHECK(csv.find("soft,") != std::string::npos);
    CHECK(csv.find("anchors_only,") != std::string::npos);

    const RunOutcome empty =
        run_cli("ablate --config " + dir.str("run.cfg") + " --out " + dir.str("out2"));
    CHECK(empty.exit_code == 2);

    const RunOutcome unknown = run_cli("ablate --config " + dir.str("run.cfg") + " --out " +
                                       dir.str("out3") + " --modes hard,bogus");
    CHECK(unknown.exit_code == 2);
    CHECK(unknown.err.find("unknown_mode") != std::string::npos);
}

TEST_CASE("ablate window modes train both predictor graphs") {
    TempDir dir("cli_window_tmp");
    write_tiny_config(dir.str("run.cfg"), dir.str("data"));
    const RunOutcome r = run_cli("ablate --config " + dir.str("run.cfg") + " --out " +
                                 dir.str("out") + " --modes window_on,window_off");
    REQUIRE(r.exit_code == 0);
    const std::string csv = slurp(dir.str("out") + "/ablate.csv");
    CHECK(csv.find("window_on,") != std::string::npos);
    CHECK(csv.find("window_off,") != std::string::npos);
}

TEST_CASE("check numerics passes on a fresh build") {
    const RunOutcome r = run_cli("check numerics");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);

    const RunOutcome bad = run_cli("check bogus_scope");
    CHECK(bad.exit_code == 2);
}

TEST_CASE("flops emits the report JSON") {
    TempDir dir("cli_flops_tmp");
    {
        std::ofstream os(dir.str("run.cfg"));
        os << "frames = 6\ntokens_per_frame = 8\nembed_dim = 4\nwindow_radius = 1\n"
              "window_dilation = 2\nanchors_per_frame = 2\nteacher_width = 16\n"
              "teacher_heads = 2\nteacher_depth = 1\n";
    }
    const RunOutcome r =
        run_cli("flops --config " + dir.str("run.cfg") + " --out " + dir.str("out"));
    REQUIRE(r.exit_code == 0);
    const auto j = nlohmann::json::parse(slurp(dir.str("out") + "/flops.json"));
    CHECK(j.contains("ratios"));
    // (T*N)^2 / ((2l+1)^2 * (T/kappa) * N^2) = 48^2 / (9*3*64) = 4/3 here
    CHECK(j.at("ratios").at("closed_form").get<double>() ==
          doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(j.at("decoder_audit").at("ratio").get<double>() > 1.0);
    // stdout carries the same report
    CHECK(r.out.find("conventions") != std::string::npos);
}
