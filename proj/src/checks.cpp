// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/checks.hpp"

#include "storm/acm.hpp"
#include "storm/driving.hpp"
#include "storm/ops.hpp"
#include "storm/predictor.hpp"
#include "storm/rng.hpp"
#include "storm/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace storm::checks {

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngState& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-scale, scale);
    return t;
}

double weighted_sum(const Tensor& y, const Tensor& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
    return s;
}

//! Micro pipeline configuration: single anchor per frame, so the hardened
//! assignment is exactly the soft one and the whole loss is differentiable.
RunConfig micro_config() {
    RunConfig cfg;
    cfg.frames = 2;
    cfg.tokens_per_frame = 4;
    cfg.embed_dim = 6;
    cfg.waypoint_horizon = 2;
    cfg.window_radius = 1;
    cfg.window_dilation = 1;
    cfg.mixer_blocks = 1;
    cfg.anchors_per_frame = 1;
    cfg.head_dim = 4;
    cfg.lambda = 5.0;
    cfg.salient_per_frame = 1;
    cfg.text_tokens = 2;
    cfg.head_hidden = 8;
    cfg.teacher_depth = 1;
    cfg.teacher_heads = 2;
    cfg.teacher_width = 8;
    cfg.scenes = 1;
    cfg.epochs = 1;
    return cfg;
}

} // namespace

CheckResult check_gradient(const std::string& name,
                           const std::function<double(const Tensor&)>& f, const Tensor& x,
                           const Tensor& analytic, double h, double tolerance,
                           const std::function<bool(std::size_t)>& skip) {
    const GradCheckResult r = grad_check(f, x, analytic, h, skip);
    return {name, r.max_rel_err, tolerance, r.max_rel_err < tolerance};
}

std::vector<CheckResult> run_numerics_checks() {
    constexpr double kTol = 1e-6;
    constexpr double kStep = 1e-6;
    std::vector<CheckResult> results;
    RngState rng(101);

    {
        Tensor a = random_tensor({5, 7}, rng);
        Tensor b = random_tensor({7, 3}, rng);
        Tensor ones = Tensor::full({5, 3}, 1.0);
        Tensor analytic = matmul_nt(ones, b);  // d sum(ab) / da = 1 b^T
        results.push_back(check_gradient(
            "matmul.grad_a", [&](const Tensor& x) {
                double s = 0.0;
                Tensor c = matmul(x, b);
                for (std::size_t i = 0; i < c.size(); ++i) s += c[i];
                return s;
            },
            a, analytic, kStep, kTol));
    }
    {
        Tensor x = random_tensor({3, 8}, rng);
        Tensor w = random_tensor({3, 8}, rng);
        LayerNormCache cache;
        layer_norm(x, &cache);
        Tensor analytic = layer_norm_backward(w, cache);
        results.push_back(check_gradient(
            "layer_norm.grad",
            [&](const Tensor& probe) { return weighted_sum(layer_norm(probe), w); }, x,
            analytic, kStep, kTol));
    }
    {
        Tensor x({17});
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = -4.0 + 8.0 * static_cast<double>(i) / 16.0;
        }
        Tensor w = random_tensor({17}, rng);
        Tensor analytic = gelu_backward(w, x);
        results.push_back(check_gradient(
            "gelu.grad", [&](const Tensor& probe) { return weighted_sum(gelu(probe), w); }, x,
            analytic, kStep, kTol));
    }
    {
        Tensor x = random_tensor({4, 6}, rng);
        Tensor w = random_tensor({4, 6}, rng);
        Tensor y = softmax(x, 1);
        Tensor analytic = softmax_backward(w, y, 1);
        results.push_back(check_gradient(
            "softmax.jvp",
            [&](const Tensor& probe) { return weighted_sum(softmax(probe, 1), w); }, x,
            analytic, kStep, kTol));
    }
    {
        Tensor logits = random_tensor({3, 5}, rng);
        Tensor w = random_tensor({3, 5}, rng);
        const double temperature = 0.7;
        Tensor y = gumbel_softmax(logits, temperature, nullptr);
        Tensor analytic = gumbel_softmax_backward(w, y, temperature);
        results.push_back(check_gradient(
            "gumbel_softmax.grad",
            [&](const Tensor& probe) {
                return weighted_sum(gumbel_softmax(probe, temperature, nullptr), w);
            },
            logits, analytic, kStep, kTol));
    }
    {
        Tensor pred = random_tensor({4, 3}, rng);
        Tensor target = random_tensor({4, 3}, rng);
        Tensor analytic = l1_loss_backward(pred, target);
        results.push_back(check_gradient(
            "l1_loss.subgradient",
            [&](const Tensor& probe) { return l1_loss(probe, target); }, pred, analytic,
            kStep, 1e-5,
            [&](std::size_t i) { return std::abs(pred[i] - target[i]) < 1e-8; }));
    }
    return results;
}

std::vector<CheckResult> run_predictor_checks() {
    constexpr double kTol = 1e-5;
    constexpr double kStep = 1e-5;
    std::vector<CheckResult> results;
    RngState rng(202);

    // token mixing on a small window
    {
        const std::size_t frames = 3, n = 4, d = 5;
        const predictor::WindowSpec spec{1, 1};
        Tensor z = random_tensor({frames * n, d}, rng);
        Tensor w1 = random_tensor({2 * spec.width() * n, spec.width() * n}, rng, 0.4);
        Tensor w2 = random_tensor({n, 2 * spec.width() * n}, rng, 0.4);
        Tensor w = random_tensor({n, d}, rng);
        const std::size_t tau = 2;

        auto loss_with = [&](const Tensor& z_in, const Tensor& w1_in, const Tensor& w2_in) {
            return weighted_sum(predictor::token_mix(z_in, tau, frames, spec, w1_in, w2_in), w);
        };
        predictor::TokenMixCache cache;
        predictor::token_mix(z, tau, frames, spec, w1, w2, &cache);
        Tensor dz = Tensor::zeros(z.shape());
        Tensor dw1 = Tensor::zeros(w1.shape());
        Tensor dw2 = Tensor::zeros(w2.shape());
        predictor::token_mix_backward(w, cache, tau, w1, w2, dz, dw1, dw2);

        results.push_back(check_gradient(
            "token_mix.grad_input",
            [&](const Tensor& probe) { return loss_with(probe, w1, w2); }, z, dz, kStep, kTol));
        results.push_back(check_gradient(
            "token_mix.grad_w1",
            [&](const Tensor& probe) { return loss_with(z, probe, w2); }, w1, dw1, kStep,
            kTol));
        results.push_back(check_gradient(
            "token_mix.grad_w2",
            [&](const Tensor& probe) { return loss_with(z, w1, probe); }, w2, dw2, kStep,
            kTol));
    }
    // channel mixing
    {
        const std::size_t rows = 6, d = 5;
        Tensor h = random_tensor({rows, d}, rng);
        Tensor w3 = random_tensor({2 * d, d}, rng, 0.5);
        Tensor w4 = random_tensor({d, 2 * d}, rng, 0.5);
        Tensor w = random_tensor({rows, d}, rng);

        predictor::ChannelMixCache cache;
        predictor::channel_mix(h, w3, w4, &cache);
        Tensor dw3 = Tensor::zeros(w3.shape());
        Tensor dw4 = Tensor::zeros(w4.shape());
        Tensor dh = predictor::channel_mix_backward(w, cache, w3, w4, dw3, dw4);

        results.push_back(check_gradient(
            "channel_mix.grad_input",
            [&](const Tensor& probe) {
                return weighted_sum(predictor::channel_mix(probe, w3, w4), w);
            },
            h, dh, kStep, kTol));
        results.push_back(check_gradient(
            "channel_mix.grad_w3",
            [&](const Tensor& probe) {
                return weighted_sum(predictor::channel_mix(h, probe, w4), w);
            },
            w3, dw3, kStep, kTol));
        results.push_back(check_gradient(
            "channel_mix.grad_w4",
            [&](const Tensor& probe) {
                return weighted_sum(predictor::channel_mix(h, w3, probe), w);
            },
            w4, dw4, kStep, kTol));
    }
    // full predictor, every parameter
    {
        const std::size_t frames = 3, n = 4, d = 5;
        const predictor::WindowSpec spec{1, 1};
        RngState init(203);
        predictor::PredictorParams params = predictor::PredictorParams::init(
            frames, n, d, spec, 2, predictor::MixerMode::SlidingWindow, init);
        predictor::FrameStack stack(random_tensor({frames, n, d}, rng));
        Tensor w = random_tensor({frames * n}, rng);

        predictor::PredictorCache cache;
        predict_importance(stack, params, spec, {}, &cache);
        predictor::PredictorGrads grads = predictor::PredictorGrads::zeros_like(params);
        predict_importance_backward(w, params, spec, {}, cache, grads);

        std::vector<std::pair<std::string, Tensor*>> param_list, grad_list;
        params.for_each(
            [&](const std::string& nm, Tensor& t) { param_list.emplace_back(nm, &t); });
        grads.for_each(
            [&](const std::string& nm, Tensor& t) { grad_list.emplace_back(nm, &t); });
        for (std::size_t p = 0; p < param_list.size(); ++p) {
            Tensor* target = param_list[p].second;
            const Tensor original = *target;
            results.push_back(check_gradient(
                "predictor.full." + param_list[p].first,
                [&](const Tensor& probe) {
                    *target = probe;
                    const double v =
                        weighted_sum(predict_importance(stack, params, spec, {}).s, w);
                    *target = original;
                    return v;
                },
                original, *grad_list[p].second, kStep, kTol));
        }
    }
    return results;
}

std::vector<CheckResult> run_acm_checks() {
    constexpr double kTol = 1e-5;
    constexpr double kStep = 1e-5;
    std::vector<CheckResult> results;
    RngState rng(303);

    const std::size_t frames = 2, n = 5, d = 6, k = 2, head = 4;
    RngState init(304);
    acm::AcmParams params = acm::AcmParams::init(d, head, init);
    predictor::FrameStack stack(random_tensor({frames, n, d}, rng));
    predictor::ImportanceScores scores;
    scores.s = random_tensor({frames * n}, rng);
    Tensor w = random_tensor({frames * k, d}, rng);
    const double temperature = 1.3;

    // The soft merge path is differentiable end to end, so every projection
    // gets a finite-difference check there. The hard path shares all code
    // except the hardening, whose straight-through contract is checked
    // exactly elsewhere; W_V and W_O stay exactly checkable under hardening.
    auto run_mode = [&](acm::MergeMode mode, const char* tag,
                        const std::vector<std::string>& names) {
        acm::ReduceCache cache;
        reduce_stack(stack, scores, params, k, temperature, nullptr, mode, &cache);
        acm::AcmGrads grads = acm::AcmGrads::zeros_like(params);
        reduce_stack_backward(w, params, cache, mode, grads);

        std::vector<std::pair<std::string, Tensor*>> param_list, grad_list;
        params.for_each(
            [&](const std::string& nm, Tensor& t) { param_list.emplace_back(nm, &t); });
        grads.for_each(
            [&](const std::string& nm, Tensor& t) { grad_list.emplace_back(nm, &t); });
        for (std::size_t p = 0; p < param_list.size(); ++p) {
            if (std::find(names.begin(), names.end(), param_list[p].first) == names.end()) {
                continue;
            }
            Tensor* target = param_list[p].second;
            const Tensor original = *target;
            results.push_back(check_gradient(
                std::string("acm.") + tag + "." + param_list[p].first,
                [&](const Tensor& probe) {
                    *target = probe;
                    const double v = weighted_sum(
                        reduce_stack(stack, scores, params, k, temperature, nullptr, mode), w);
                    *target = original;
                    return v;
                },
                original, *grad_list[p].second, kStep, kTol));
        }
    };
    run_mode(acm::MergeMode::Soft, "soft", {"acm.wq", "acm.wk", "acm.wv", "acm.wo"});
    run_mode(acm::MergeMode::Hard, "hard", {"acm.wv", "acm.wo"});
    return results;
}

std::vector<CheckResult> run_e2e_checks() {
    constexpr double kTol = 1e-4;
    constexpr double kStep = 1e-5;
    std::vector<CheckResult> results;

    const RunConfig cfg = micro_config();
    const driving::SceneConfig scene_cfg = driving::SceneConfig::from_run(cfg);
    const driving::Scene scene = driving::synthesize_scene(RngState(41), scene_cfg);
    const teacher::Teacher frozen(cfg.teacher_config(), cfg.embed_dim, cfg.teacher_seed);
    const Tensor text = driving::make_text_tokens(cfg);

    RngState init(cfg.init_seed);
    driving::ModelParams params = driving::ModelParams::init(cfg, init);
    driving::ModelGrads grads = driving::ModelGrads::zeros_like(params);
    driving::training_step(scene, text, params, frozen, cfg, /*temperature=*/0.8,
                           /*gumbel_rng=*/nullptr, &grads);

    std::vector<std::pair<std::string, Tensor*>> param_list, grad_list;
    params.for_each([&](const std::string& nm, Tensor& t) { param_list.emplace_back(nm, &t); });
    grads.for_each([&](const std::string& nm, Tensor& t) { grad_list.emplace_back(nm, &t); });

    for (std::size_t p = 0; p < param_list.size(); ++p) {
        Tensor* target = param_list[p].second;
        const Tensor original = *target;
        results.push_back(check_gradient(
            "e2e." + param_list[p].first,
            [&](const Tensor& probe) {
                *target = probe;
                const double v = driving::training_step(scene, text, params, frozen, cfg, 0.8,
                                                        nullptr, nullptr)
                                     .total;
                *target = original;
                return v;
            },
            original, *grad_list[p].second, kStep, kTol));
    }
    return results;
}

std::vector<CheckResult> run_scope(const std::string& scope) {
    std::vector<CheckResult> results;
    auto append = [&](std::vector<CheckResult> more) {
        results.insert(results.end(), more.begin(), more.end());
    };
    if (scope == "numerics" || scope == "all") append(run_numerics_checks());
    if (scope == "predictor" || scope == "all") append(run_predictor_checks());
    if (scope == "acm" || scope == "all") append(run_acm_checks());
    if (scope == "e2e" || scope == "all") append(run_e2e_checks());
    if (results.empty()) throw ConfigError("unknown check scope '" + scope + "'");
    return results;
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const CheckResult& r : results) {
        if (!r.pass) return false;
    }
    return true;
}

void print_results(std::ostream& os, const std::vector<CheckResult>& results) {
    char buf[160];
    for (const CheckResult& r : results) {
        std::snprintf(buf, sizeof(buf), "%-40s rel_err %10.3e  tol %7.1e  %s\n",
                      r.name.c_str(), r.max_rel_err, r.tolerance, r.pass ? "PASS" : "FAIL");
        os << buf;
    }
}

} // namespace storm::checks
