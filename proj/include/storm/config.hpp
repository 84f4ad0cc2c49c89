// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/acm.hpp"
#include "storm/predictor.hpp"
#include "storm/teacher.hpp"
#include "storm/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace storm {

//! Fully resolved run configuration. Every run emits this next to its
//! outputs; replaying an emitted file reproduces results bit-identically.
struct RunConfig {
    // stack dims
    std::size_t frames = 30;             // T
    std::size_t tokens_per_frame = 100;  // N
    std::size_t embed_dim = 256;         // D
    std::size_t waypoint_horizon = 10;   // T_+
    std::size_t window_radius = 1;       // ell
    std::size_t window_dilation = 2;     // kappa
    std::size_t mixer_blocks = 4;        // L
    std::size_t anchors_per_frame = 4;   // K
    std::size_t head_dim = 64;           // D_head

    // training
    double lambda = 50.0;
    double temperature_start = 1.0;
    double temperature_end = 0.3;
    double learning_rate = 1e-3;
    double grad_clip = 1.0;
    std::size_t epochs = 20;
    std::size_t scenes = 200;
    std::size_t salient_per_frame = 3;
    double noise_scale = 0.5;
    std::size_t text_tokens = 4;
    std::size_t head_hidden = 64;

    // frozen teacher
    std::size_t teacher_depth = 2;
    std::size_t teacher_heads = 4;
    std::size_t teacher_width = 128;

    // modes
    bool strided_tau = false;
    std::string merge_mode = "hard";        // hard | soft | anchors_only
    std::string predictor_mode = "mixer";   // mixer | mixer_no_window

    // seeds
    std::uint64_t data_seed = 1;
    std::uint64_t init_seed = 2;
    std::uint64_t gumbel_seed = 3;
    std::uint64_t teacher_seed = 4;

    // paths
    std::string dataset_dir;

    void validate() const;

    predictor::WindowSpec window_spec() const { return {window_radius, window_dilation}; }
    predictor::MixerMode mixer_mode() const;
    acm::MergeMode merge_mode_enum() const;
    teacher::ToyDecoderConfig teacher_config() const {
        return {teacher_depth, teacher_heads, teacher_width, 4};
    }
};

//! Flat `key = value` text format; '#' starts a comment. Unknown keys are
//! rejected so typos cannot silently change a run.
RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);
//! Canonical serialization: every key, fixed order, full double precision.
void write_config(std::ostream& os, const RunConfig& cfg);
void save_config(const std::string& path, const RunConfig& cfg);

} // namespace storm
