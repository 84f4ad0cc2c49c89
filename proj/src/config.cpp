// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace storm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& v) {
    std::size_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("expected unsigned integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& v) { return parse_size(v); }

double parse_double(const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("expected bool, got '" + v + "'");
}

std::string fmt_double(double d) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"frames", [](RunConfig& c, const std::string& v) { c.frames = parse_size(v); }},
        {"tokens_per_frame",
         [](RunConfig& c, const std::string& v) { c.tokens_per_frame = parse_size(v); }},
        {"embed_dim", [](RunConfig& c, const std::string& v) { c.embed_dim = parse_size(v); }},
        {"waypoint_horizon",
         [](RunConfig& c, const std::string& v) { c.waypoint_horizon = parse_size(v); }},
        {"window_radius",
         [](RunConfig& c, const std::string& v) { c.window_radius = parse_size(v); }},
        {"window_dilation",
         [](RunConfig& c, const std::string& v) { c.window_dilation = parse_size(v); }},
        {"mixer_blocks",
         [](RunConfig& c, const std::string& v) { c.mixer_blocks = parse_size(v); }},
        {"anchors_per_frame",
         [](RunConfig& c, const std::string& v) { c.anchors_per_frame = parse_size(v); }},
        {"head_dim", [](RunConfig& c, const std::string& v) { c.head_dim = parse_size(v); }},
        {"lambda", [](RunConfig& c, const std::string& v) { c.lambda = parse_double(v); }},
        {"temperature_start",
         [](RunConfig& c, const std::string& v) { c.temperature_start = parse_double(v); }},
        {"temperature_end",
         [](RunConfig& c, const std::string& v) { c.temperature_end = parse_double(v); }},
        {"learning_rate",
         [](RunConfig& c, const std::string& v) { c.learning_rate = parse_double(v); }},
        {"grad_clip", [](RunConfig& c, const std::string& v) { c.grad_clip = parse_double(v); }},
        {"epochs", [](RunConfig& c, const std::string& v) { c.epochs = parse_size(v); }},
        {"scenes", [](RunConfig& c, const std::string& v) { c.scenes = parse_size(v); }},
        {"salient_per_frame",
         [](RunConfig& c, const std::string& v) { c.salient_per_frame = parse_size(v); }},
        {"noise_scale",
         [](RunConfig& c, const std::string& v) { c.noise_scale = parse_double(v); }},
        {"text_tokens",
         [](RunConfig& c, const std::string& v) { c.text_tokens = parse_size(v); }},
        {"head_hidden",
         [](RunConfig& c, const std::string& v) { c.head_hidden = parse_size(v); }},
        {"teacher_depth",
         [](RunConfig& c, const std::string& v) { c.teacher_depth = parse_size(v); }},
        {"teacher_heads",
         [](RunConfig& c, const std::string& v) { c.teacher_heads = parse_size(v); }},
        {"teacher_width",
         [](RunConfig& c, const std::string& v) { c.teacher_width = parse_size(v); }},
        {"strided_tau",
         [](RunConfig& c, const std::string& v) { c.strided_tau = parse_bool(v); }},
        {"merge_mode", [](RunConfig& c, const std::string& v) { c.merge_mode = v; }},
        {"predictor_mode", [](RunConfig& c, const std::string& v) { c.predictor_mode = v; }},
        {"data_seed", [](RunConfig& c, const std::string& v) { c.data_seed = parse_u64(v); }},
        {"init_seed", [](RunConfig& c, const std::string& v) { c.init_seed = parse_u64(v); }},
        {"gumbel_seed",
         [](RunConfig& c, const std::string& v) { c.gumbel_seed = parse_u64(v); }},
        {"teacher_seed",
         [](RunConfig& c, const std::string& v) { c.teacher_seed = parse_u64(v); }},
        {"dataset_dir", [](RunConfig& c, const std::string& v) { c.dataset_dir = v; }},
    };
    return table;
}

} // namespace

void RunConfig::validate() const {
    if (frames < 1 || tokens_per_frame < 2 || embed_dim < 2) {
        throw ConfigError("frames/tokens_per_frame/embed_dim out of range");
    }
    window_spec().validate();
    if (anchors_per_frame < 1 || anchors_per_frame >= tokens_per_frame) {
        throw ConfigError("anchors_per_frame must satisfy 1 <= K < N");
    }
    if (head_dim < 1 || waypoint_horizon < 1) throw ConfigError("head_dim/horizon out of range");
    if (salient_per_frame > tokens_per_frame) {
        throw ConfigError("salient_per_frame exceeds tokens_per_frame");
    }
    if (!(temperature_start > 0.0) || !(temperature_end > 0.0)) {
        throw ConfigError("temperatures must be positive");
    }
    if (teacher_width % teacher_heads != 0) {
        throw ConfigError("teacher_width must be divisible by teacher_heads");
    }
    if (merge_mode != "hard" && merge_mode != "soft" && merge_mode != "anchors_only") {
        throw ConfigError("merge_mode must be hard|soft|anchors_only, got '" + merge_mode + "'");
    }
    if (predictor_mode != "mixer" && predictor_mode != "mixer_no_window") {
        throw ConfigError("predictor_mode must be mixer|mixer_no_window, got '" +
                          predictor_mode + "'");
    }
}

predictor::MixerMode RunConfig::mixer_mode() const {
    return predictor_mode == "mixer" ? predictor::MixerMode::SlidingWindow
                                     : predictor::MixerMode::FullSequence;
}

acm::MergeMode RunConfig::merge_mode_enum() const {
    if (merge_mode == "hard") return acm::MergeMode::Hard;
    if (merge_mode == "soft") return acm::MergeMode::Soft;
    return acm::MergeMode::AnchorsOnly;
}

RunConfig parse_config(std::istream& is) {
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(key);
        if (it == setters().end()) {
            throw ConfigError("unknown key '" + key + "'");
        }
        it->second(cfg, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    return parse_config(is);
}

void write_config(std::ostream& os, const RunConfig& c) {
    os << "frames = " << c.frames << '\n';
    os << "tokens_per_frame = " << c.tokens_per_frame << '\n';
    os << "embed_dim = " << c.embed_dim << '\n';
    os << "waypoint_horizon = " << c.waypoint_horizon << '\n';
    os << "window_radius = " << c.window_radius << '\n';
    os << "window_dilation = " << c.window_dilation << '\n';
    os << "mixer_blocks = " << c.mixer_blocks << '\n';
    os << "anchors_per_frame = " << c.anchors_per_frame << '\n';
    os << "head_dim = " << c.head_dim << '\n';
    os << "lambda = " << fmt_double(c.lambda) << '\n';
    os << "temperature_start = " << fmt_double(c.temperature_start) << '\n';
    os << "temperature_end = " << fmt_double(c.temperature_end) << '\n';
    os << "learning_rate = " << fmt_double(c.learning_rate) << '\n';
    os << "grad_clip = " << fmt_double(c.grad_clip) << '\n';
    os << "epochs = " << c.epochs << '\n';
    os << "scenes = " << c.scenes << '\n';
    os << "salient_per_frame = " << c.salient_per_frame << '\n';
    os << "noise_scale = " << fmt_double(c.noise_scale) << '\n';
    os << "text_tokens = " << c.text_tokens << '\n';
    os << "head_hidden = " << c.head_hidden << '\n';
    os << "teacher_depth = " << c.teacher_depth << '\n';
    os << "teacher_heads = " << c.teacher_heads << '\n';
    os << "teacher_width = " << c.teacher_width << '\n';
    os << "strided_tau = " << (c.strided_tau ? "true" : "false") << '\n';
    os << "merge_mode = " << c.merge_mode << '\n';
    os << "predictor_mode = " << c.predictor_mode << '\n';
    os << "data_seed = " << c.data_seed << '\n';
    os << "init_seed = " << c.init_seed << '\n';
    os << "gumbel_seed = " << c.gumbel_seed << '\n';
    os << "teacher_seed = " << c.teacher_seed << '\n';
    os << "dataset_dir = " << c.dataset_dir << '\n';
}

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write config: " + path);
    write_config(os, cfg);
}

} // namespace storm
