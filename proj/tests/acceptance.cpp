// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate: every criterion below runs at its stated tolerance and
// prints exactly one PASS/FAIL line. The process exits nonzero if any fails.

#include "storm/acm.hpp"
#include "storm/checks.hpp"
#include "storm/config.hpp"
#include "storm/driving.hpp"
#include "storm/flops.hpp"
#include "storm/kernels.hpp"
#include "storm/ops.hpp"
#include "storm/predictor.hpp"
#include "storm/rng.hpp"
#include "storm/teacher.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace storm;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngState& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-scale, scale);
    return t;
}

//! The documented desk-scale training configuration.
RunConfig desk_config() {
    RunConfig cfg;
    cfg.frames = 6;
    cfg.tokens_per_frame = 16;
    cfg.embed_dim = 32;
    cfg.waypoint_horizon = 5;
    cfg.window_radius = 1;
    cfg.window_dilation = 2;
    cfg.mixer_blocks = 2;
    cfg.anchors_per_frame = 2;
    cfg.head_dim = 16;
    cfg.scenes = 200;
    cfg.epochs = 20;
    cfg.salient_per_frame = 3;
    cfg.text_tokens = 4;
    cfg.head_hidden = 64;
    return cfg;
}

// ---------------------------------------------------------------------------

bool criterion_token_budget(std::ostream& note) {
    const std::size_t frames = 30, n = 100, k = 4, d = 32;
    RngState rng(11);
    RngState init(12);
    acm::AcmParams params = acm::AcmParams::init(d, 16, init);
    predictor::FrameStack stack(random_tensor({frames, n, d}, rng));
    predictor::ImportanceScores scores;
    scores.s = random_tensor({frames * n}, rng);

    const Tensor reduced = reduce_stack(stack, scores, params, k, 1.0, nullptr);
    const bool reduced_ok = reduced.extent(0) == 120 && reduced.all_finite();

    // all-token path bookkeeping: the auxiliary sequence carries every
    // visual token
    teacher::Teacher frozen({2, 4, 32, 2}, d, 13);
    teacher::TokenSequence seq;
    seq.visual = matmul(stack.flattened(), frozen.aux_projection);
    const bool all_ok = seq.visual_positions().size() == 3000 && seq.total() == 3000;

    note << "reduced tokens " << reduced.extent(0) << ", all-token path " << seq.total();
    return reduced_ok && all_ok;
}

bool criterion_table_ratio(std::ostream& note) {
    const flops::MixerConfig cfg{30, 100, 256, 1, 2};
    const std::uint64_t existing = flops::closed_form(cfg, flops::MixingVariant::Existing);
    const std::uint64_t proposed = flops::closed_form(cfg, flops::MixingVariant::Proposed);
    const std::uint64_t g = std::gcd(existing, proposed);
    const bool exact = (existing / g == 20) && (proposed / g == 3);

    // strided-mode census against the closed form across N: the factor must
    // be the same constant (16/3 in scalar ops) for every N
    bool constant_factor = true;
    for (std::size_t n : {std::size_t{20}, std::size_t{50}, std::size_t{100}}) {
        flops::MixerConfig c{30, n, 256, 1, 2};
        const std::uint64_t census =
            flops::empirical_count(c, flops::MixingVariant::Proposed, /*strided=*/true);
        const std::uint64_t closed = flops::closed_form(c, flops::MixingVariant::Proposed);
        if (3 * census != 16 * closed) constant_factor = false;
    }
    note << "closed-form ratio " << existing / g << "/" << proposed / g
         << ", census/closed = 16/3 across N in {20,50,100}: "
         << (constant_factor ? "yes" : "no");
    return exact && constant_factor;
}

bool criterion_gradient_suite(std::ostream& note) {
    double worst_numerics = 0.0, worst_module = 0.0, worst_e2e = 0.0;
    bool pass = true;
    for (const auto& r : checks::run_numerics_checks()) {
        worst_numerics = std::max(worst_numerics, r.max_rel_err);
        pass = pass && r.pass;
    }
    for (const auto& r : checks::run_predictor_checks()) {
        worst_module = std::max(worst_module, r.max_rel_err);
        pass = pass && r.pass;
    }
    for (const auto& r : checks::run_acm_checks()) {
        worst_module = std::max(worst_module, r.max_rel_err);
        pass = pass && r.pass;
    }
    for (const auto& r : checks::run_e2e_checks()) {
        worst_e2e = std::max(worst_e2e, r.max_rel_err);
        pass = pass && r.pass;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "worst rel err: primitives %.2e (tol 1e-6), modules %.2e (tol 1e-5), "
                  "end-to-end %.2e (tol 1e-4)",
                  worst_numerics, worst_module, worst_e2e);
    note << buf;
    return pass;
}

bool criterion_assignment_invariants(std::ostream& note) {
    RngState rng(440);
    std::size_t empty_checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t k = 1 + static_cast<std::size_t>(rng.next_uniform() * 4.0);
        const std::size_t nc = 1 + static_cast<std::size_t>(rng.next_uniform() * 7.0);
        const std::size_t n = k + nc;
        const std::size_t d = 6;
        RngState init(9000 + static_cast<std::uint64_t>(trial));
        acm::AcmParams params = acm::AcmParams::init(d, 4, init);
        predictor::FrameStack stack(random_tensor({1, n, d}, rng));
        predictor::ImportanceScores scores;
        scores.s = random_tensor({n}, rng);
        const double temperature = 0.3 + 1.2 * rng.next_uniform();
        RngState gumbel = rng.fork(static_cast<std::uint64_t>(trial));

        acm::ReduceCache hard_cache, soft_cache;
        std::vector<acm::MergeResult> results;
        const Tensor merged = reduce_stack(stack, scores, params, k, temperature, &gumbel,
                                           acm::MergeMode::Hard, &hard_cache, &results);
        const acm::MergeResult& r = results[0];

        // soft columns sum to 1 within 1e-12; hard columns exactly one-hot
        for (std::size_t c = 0; c < nc; ++c) {
            double sum = 0.0;
            int ones = 0;
            for (std::size_t a = 0; a < k; ++a) {
                sum += r.soft.at2(a, c);
                if (r.hard.at2(a, c) == 1.0) ++ones;
                else if (r.hard.at2(a, c) != 0.0) return false;
            }
            if (std::abs(sum - 1.0) >= 1e-12 || ones != 1) return false;
        }
        // empty-assignee anchors bit-identical to their (normalized) inputs
        const acm::FrameCache& fc = hard_cache.frames[0];
        for (std::size_t a = 0; a < k; ++a) {
            bool assigned = false;
            for (std::size_t c = 0; c < nc; ++c) assigned |= r.hard.at2(a, c) == 1.0;
            if (assigned) continue;
            ++empty_checked;
            if (std::memcmp(merged.data() + a * d, fc.part.anchors.data() + a * d,
                            d * sizeof(double)) != 0) {
                return false;
            }
        }
        // straight-through backward equals soft backward exactly on the
        // assignment path
        RngState gumbel2 = rng.fork(static_cast<std::uint64_t>(trial));
        reduce_stack(stack, scores, params, k, temperature, &gumbel2, acm::MergeMode::Soft,
                     &soft_cache);
        Tensor upstream = random_tensor({k, d}, rng);
        acm::AcmGrads hard_grads = acm::AcmGrads::zeros_like(params);
        acm::AcmGrads soft_grads = acm::AcmGrads::zeros_like(params);
        reduce_stack_backward(upstream, params, hard_cache, acm::MergeMode::Hard, hard_grads);
        reduce_stack_backward(upstream, params, soft_cache, acm::MergeMode::Soft, soft_grads);
        if (std::memcmp(hard_grads.wq.data(), soft_grads.wq.data(),
                        hard_grads.wq.size() * sizeof(double)) != 0 ||
            std::memcmp(hard_grads.wk.data(), soft_grads.wk.data(),
                        hard_grads.wk.size() * sizeof(double)) != 0) {
            return false;
        }
    }
    note << "10000 instances, " << empty_checked << " empty-anchor residuals verified";
    return empty_checked > 1000;
}

bool criterion_pseudo_signals(std::ostream& note) {
    const teacher::ToyDecoderConfig cfg{2, 2, 16, 2};
    const teacher::ToyDecoder model(cfg, 550);
    RngState rng(551);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t s = 2 + static_cast<std::size_t>(rng.next_uniform() * 10.0);
        teacher::TokenSequence seq;
        seq.visual = random_tensor({s, 16}, rng, 1.5);
        const teacher::DecodeOutput out = decode(seq, model, true);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            for (std::size_t i = 0; i < s; ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < s; ++j) sum += out.attention->at3(h, i, j);
                if (std::abs(sum - 1.0) >= 1e-12) return false;
            }
        }
        const teacher::PseudoSignals sig =
            teacher::pseudo_scores(*out.attention, seq.visual_positions());
        double total = 0.0;
        for (std::size_t j = 0; j < s; ++j) {
            const double v = sig.full_column_means[j];
            if (v < 0.0 || v > 1.0) return false;
            total += v;
        }
        if (std::abs(total - 1.0) >= 1e-9) return false;
    }

    // frozen contract across 100 real training steps
    RunConfig tiny;
    tiny.frames = 2;
    tiny.tokens_per_frame = 5;
    tiny.embed_dim = 8;
    tiny.waypoint_horizon = 2;
    tiny.window_dilation = 1;
    tiny.mixer_blocks = 1;
    tiny.anchors_per_frame = 2;
    tiny.head_dim = 4;
    tiny.scenes = 5;
    tiny.epochs = 20;  // 5 scenes x 20 epochs = 100 steps
    tiny.salient_per_frame = 2;
    tiny.text_tokens = 2;
    tiny.head_hidden = 8;
    tiny.teacher_depth = 1;
    tiny.teacher_heads = 2;
    tiny.teacher_width = 16;
    const teacher::Teacher frozen(tiny.teacher_config(), tiny.embed_dim, tiny.teacher_seed);
    const std::uint64_t before = frozen.checksum();
    const std::vector<driving::Scene> dataset = driving::make_dataset(tiny);
    RngState init(tiny.init_seed);
    driving::train(dataset, tiny, frozen, driving::ModelParams::init(tiny, init));
    const bool frozen_ok = frozen.checksum() == before;
    note << "1000 passes clean; teacher checksum " << (frozen_ok ? "constant" : "CHANGED")
         << " across 100 steps";
    return frozen_ok;
}

bool criterion_window_oracle(std::ostream& note) {
    std::size_t checked = 0;
    for (std::size_t frames = 1; frames <= 12; ++frames) {
        for (std::size_t radius = 1; radius <= 3; ++radius) {
            for (std::size_t dilation = 1; dilation <= radius + 1; ++dilation) {
                for (std::size_t tau = 1; tau <= frames; ++tau) {
                    const auto got =
                        predictor::window_indices(tau, frames, {radius, dilation});
                    std::vector<std::size_t> want;
                    for (long long i = -static_cast<long long>(radius);
                         i <= static_cast<long long>(radius); ++i) {
                        long long f = static_cast<long long>(tau) +
                                      i * static_cast<long long>(dilation);
                        if (f < 1) f = 1;
                        if (f > static_cast<long long>(frames)) {
                            f = static_cast<long long>(frames);
                        }
                        want.push_back(static_cast<std::size_t>(f));
                    }
                    if (got != want) return false;
                    ++checked;
                }
            }
        }
    }
    // gather_window against index-and-stack on 100 random stacks, exact
    RngState rng(661);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t frames = 1 + static_cast<std::size_t>(rng.next_uniform() * 8.0);
        const std::size_t n = 2 + static_cast<std::size_t>(rng.next_uniform() * 4.0);
        const std::size_t d = 3 + static_cast<std::size_t>(rng.next_uniform() * 5.0);
        const std::size_t radius = 1 + static_cast<std::size_t>(rng.next_uniform() * 2.0);
        const std::size_t dilation =
            1 + static_cast<std::size_t>(rng.next_uniform() * static_cast<double>(radius));
        const std::size_t tau = 1 + static_cast<std::size_t>(
                                        rng.next_uniform() * static_cast<double>(frames));
        Tensor z = random_tensor({frames * n, d}, rng);
        const Tensor got = predictor::gather_window(z, tau, frames, {radius, dilation});
        const auto frames_list = predictor::window_indices(tau, frames, {radius, dilation});
        for (std::size_t w = 0; w < frames_list.size(); ++w) {
            if (std::memcmp(got.data() + w * n * d, z.data() + (frames_list[w] - 1) * n * d,
                            n * d * sizeof(double)) != 0) {
                return false;
            }
        }
    }
    note << checked << " exhaustive window cases + 100 random gathers, exact";
    return true;
}

bool criterion_training_smoke(std::ostream& note) {
    // stated budget is one CPU core: force the serial kernels
    const ExecMode saved = exec_mode();
    set_exec_mode(ExecMode::Serial);
    const auto t0 = std::chrono::steady_clock::now();

    const RunConfig cfg = desk_config();
    const std::vector<driving::Scene> dataset = driving::make_dataset(cfg);
    const teacher::Teacher frozen(cfg.teacher_config(), cfg.embed_dim, cfg.teacher_seed);

    auto run_once = [&]() {
        RngState init(cfg.init_seed);
        return driving::train(dataset, cfg, frozen, driving::ModelParams::init(cfg, init));
    };
    const driving::TrainResult a = run_once();
    const driving::TrainResult b = run_once();
    set_exec_mode(saved);

    bool identical = a.curve.size() == b.curve.size();
    for (std::size_t e = 0; identical && e < a.curve.size(); ++e) {
        identical = a.curve[e].wp == b.curve[e].wp && a.curve[e].score == b.curve[e].score &&
                    a.curve[e].total == b.curve[e].total;
    }
    std::vector<std::pair<std::string, Tensor*>> pa, pb;
    driving::TrainResult& ma = const_cast<driving::TrainResult&>(a);
    driving::TrainResult& mb = const_cast<driving::TrainResult&>(b);
    ma.params.for_each([&](const std::string& nm, Tensor& t) { pa.emplace_back(nm, &t); });
    mb.params.for_each([&](const std::string& nm, Tensor& t) { pb.emplace_back(nm, &t); });
    for (std::size_t i = 0; identical && i < pa.size(); ++i) {
        identical = std::memcmp(pa[i].second->data(), pb[i].second->data(),
                                pa[i].second->size() * sizeof(double)) == 0;
    }

    const double drop = 1.0 - a.curve.back().total / a.curve.front().total;
    const driving::SalienceReport rep = driving::salience_report(dataset, a.params, cfg);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "loss %.3f -> %.3f (drop %.0f%%), salience %.4f > %.4f, runs %s, %.0fs",
                  a.curve.front().total, a.curve.back().total, 100.0 * drop,
                  rep.salient_mean, rep.noise_mean, identical ? "bit-identical" : "DIFFER",
                  seconds);
    note << buf;
    return drop >= 0.5 && rep.salient_mean > rep.noise_mean && identical &&
           seconds < 600.0;
}

bool criterion_ablation_directions(std::ostream& note) {
    // window-on census strictly below window-off at the production shape
    const flops::MixerConfig shape{30, 100, 256, 1, 2};
    const std::uint64_t window_off =
        flops::empirical_count(shape, flops::MixingVariant::Existing, false);
    const std::uint64_t window_on_dense =
        flops::empirical_count(shape, flops::MixingVariant::Proposed, false);
    const std::uint64_t window_on_strided =
        flops::empirical_count(shape, flops::MixingVariant::Proposed, true);
    const bool census_ok = window_on_dense < window_off && window_on_strided < window_off;

    // merge modes run on shared seeds and give distinct finite outputs
    RngState rng(880);
    RngState init(881);
    const std::size_t frames = 6, n = 16, d = 32, k = 2;
    acm::AcmParams params = acm::AcmParams::init(d, 16, init);
    predictor::FrameStack stack(random_tensor({frames, n, d}, rng));
    predictor::ImportanceScores scores;
    scores.s = random_tensor({frames * n}, rng);
    auto reduce_mode = [&](acm::MergeMode mode) {
        RngState gumbel(882);
        return reduce_stack(stack, scores, params, k, 0.8, &gumbel, mode);
    };
    const Tensor hard = reduce_mode(acm::MergeMode::Hard);
    const Tensor soft = reduce_mode(acm::MergeMode::Soft);
    const Tensor anchors = reduce_mode(acm::MergeMode::AnchorsOnly);
    const bool all_finite = hard.all_finite() && soft.all_finite() && anchors.all_finite();
    const bool distinct =
        std::memcmp(hard.data(), soft.data(), hard.size() * sizeof(double)) != 0 &&
        std::memcmp(hard.data(), anchors.data(), hard.size() * sizeof(double)) != 0 &&
        std::memcmp(soft.data(), anchors.data(), soft.size() * sizeof(double)) != 0;

    note << "censuses: window-off " << window_off << " > window-on dense " << window_on_dense
         << " > strided " << window_on_strided << "; merge modes distinct: "
         << (distinct ? "yes" : "no")
         << " (which merge mode drives best is a full-scale question, not asserted)";
    return census_ok && all_finite && distinct;
}

bool criterion_decoder_cost(std::ostream& note) {
    const teacher::ToyDecoderConfig cfg{2, 4, 128, 4};
    const flops::DecoderAudit audit = flops::headline_ratio(3000, 120, cfg);
    const bool ok = audit.census_reduced < audit.census_all &&
                    audit.ratio > audit.linear_bound && audit.ratio < audit.quadratic_bound;
    char buf[220];
    std::snprintf(buf, sizeof(buf),
                  "census 3000 tokens %.3e > 120 tokens %.3e; ratio %.1f within "
                  "[linear %.0f, quadratic %.0f]; the ~30x full-system figure needs the "
                  "full-size backbone and stays out of desk-scale scope",
                  static_cast<double>(audit.census_all),
                  static_cast<double>(audit.census_reduced), audit.ratio,
                  audit.linear_bound, audit.quadratic_bound);
    note << buf;
    return ok;
}

struct Criterion {
    int id;
    const char* label;
    std::function<bool(std::ostream&)> run;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "token budget 120 reduced / 3000 all-token", criterion_token_budget},
        {2, "mixing-cost ratio 20/3 exact, census factor constant", criterion_table_ratio},
        {3, "gradient suite vs central finite differences", criterion_gradient_suite},
        {4, "assignment invariants over 10^4 instances", criterion_assignment_invariants},
        {5, "pseudo-signal invariants and frozen teacher", criterion_pseudo_signals},
        {6, "window indices and gather against oracles", criterion_window_oracle},
        {7, "desk-scale training smoke", criterion_training_smoke},
        {8, "ablation direction checks", criterion_ablation_directions},
        {9, "decoder cost monotonicity and bounds", criterion_decoder_cost},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        std::ostringstream note;
        bool ok = false;
        try {
            ok = c.run(note);
        } catch (const std::exception& e) {
            note << "exception: " << e.what();
        }
        if (!ok) ++failures;
        std::printf("[%s] criterion %d: %s — %s\n", ok ? "PASS" : "FAIL", c.id, c.label,
                    note.str().c_str());
        std::fflush(stdout);
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
