// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/predictor.hpp"
#include "storm/teacher.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>

namespace storm::flops {

struct MixerConfig {
    std::size_t frames = 30;             // T
    std::size_t tokens_per_frame = 100;  // N
    std::size_t embed_dim = 256;         // D
    std::size_t window_radius = 1;       // ell
    std::size_t window_dilation = 2;     // kappa
};

enum class MixingVariant {
    Existing,  // one token-mixing MLP over all T*N tokens
    Proposed,  // sliding-window mixing per frame
};

//! Dominant multiply-add term with constants dropped:
//! existing D*(TN)^2, proposed D*(2l+1)^2*ceil(T/kappa)*N^2.
std::uint64_t closed_form(const MixerConfig& cfg, MixingVariant variant);

//! Exact scalar multiply+add census (2 per multiply-add pair) of one
//! instrumented token-mixing forward pass. strided_tau makes the proposed
//! variant evaluate only every kappa-th frame, matching the closed form's
//! (T/kappa) factor.
std::uint64_t empirical_count(const MixerConfig& cfg, MixingVariant variant, bool strided_tau);

struct DecoderAudit {
    std::uint64_t census_all = 0;
    std::uint64_t census_reduced = 0;
    double ratio = 0.0;
    double linear_bound = 0.0;     // all/reduced
    double quadratic_bound = 0.0;  // (all/reduced)^2
};

//! Instrumented toy-decoder forward costs at the two sequence lengths. The
//! empirical ratio must land between the linear and quadratic bounds.
DecoderAudit headline_ratio(std::size_t all_tokens, std::size_t reduced_tokens,
                            const teacher::ToyDecoderConfig& decoder_cfg);

struct FlopsReport {
    MixerConfig config;
    std::uint64_t closed_form_existing = 0;
    std::uint64_t closed_form_proposed = 0;
    std::uint64_t empirical_existing = 0;  // scalar ops
    std::uint64_t empirical_proposed = 0;  // scalar ops, strided mode
    double ratio_closed_form = 0.0;
    double ratio_empirical = 0.0;
    bool no_benefit = false;  // proposed >= existing in closed form
    DecoderAudit decoder;
    std::size_t decoder_all_tokens = 0;
    std::size_t decoder_reduced_tokens = 0;
};

FlopsReport build_report(const MixerConfig& cfg, std::size_t all_tokens,
                         std::size_t reduced_tokens,
                         const teacher::ToyDecoderConfig& decoder_cfg);

//! JSON with the count conventions stated in the header fields.
void write_report_json(std::ostream& os, const FlopsReport& report);

} // namespace storm::flops
