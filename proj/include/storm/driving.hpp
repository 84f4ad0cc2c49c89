// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/acm.hpp"
#include "storm/config.hpp"
#include "storm/predictor.hpp"
#include "storm/rng.hpp"
#include "storm/teacher.hpp"
#include "storm/tensor.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace storm::driving {

struct SceneConfig {
    std::size_t frames = 6;
    std::size_t tokens_per_frame = 16;
    std::size_t width = 32;       // must be >= 6 for the latent feature channels
    std::size_t horizon = 5;      // T_+
    std::size_t salient_per_frame = 3;
    double noise_scale = 0.5;
    double marker_scale = 3.0;
    //! Unit direction carrying the salient marker; empty means channel 0.
    //! Datasets built for training use the teacher's preferred direction,
    //! standing in for a pretrained encoder aligned with its backbone.
    Tensor marker_direction;

    static SceneConfig from_run(const RunConfig& cfg);
    void validate() const;
};

//! Synthetic driving snippet. Waypoints are a deterministic function of the
//! latent trajectory, which only the salient tokens encode; every other
//! token is resampleable noise.
struct Scene {
    Tensor tokens;        // T x N x D
    Tensor waypoints;     // T_+ x 2, ego frame at the current step, meters
    Tensor salient_mask;  // T x N of 0/1
    std::uint64_t seed = 0;
};

//! Deterministic core: embeds (speed, turn_rate) features at the given
//! per-frame positions and fills the rest with noise from noise_rng.
Scene make_scene(double speed, double turn_rate,
                 const std::vector<std::vector<std::size_t>>& salient_positions,
                 const SceneConfig& cfg, RngState noise_rng);

//! Draws the trajectory latents and salient positions from rng.
Scene synthesize_scene(const RngState& rng, const SceneConfig& cfg);

//! Redraws every non-salient token; salient tokens and waypoints untouched.
void resample_noise_tokens(Scene& scene, const SceneConfig& cfg, RngState& rng);

//! Two-layer MLP head mapping mean-pooled decoder outputs to T_+ x 2.
struct WaypointHead {
    Tensor w1;  // width x hidden
    Tensor b1;  // 1 x hidden
    Tensor w2;  // hidden x 2*T_+
    Tensor b2;  // 1 x 2*T_+

    static WaypointHead init(std::size_t width, std::size_t hidden, std::size_t horizon,
                             RngState& rng);
    static WaypointHead zeros_like(const WaypointHead& other);
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct WaypointCache {
    Tensor pooled;   // 1 x width
    Tensor pre;      // 1 x hidden
    Tensor act;      // 1 x hidden
    std::size_t pooled_rows = 0;
};

Tensor predict_waypoints(const Tensor& decoder_outputs, const WaypointHead& head,
                         WaypointCache* cache = nullptr);
//! Returns the cotangent of the decoder outputs; head gradients accumulate.
Tensor predict_waypoints_backward(const Tensor& d_waypoints, const WaypointHead& head,
                                  const WaypointCache& cache, WaypointHead& grads);

//! Everything the optimizer touches. The teacher stays outside, frozen.
struct ModelParams {
    predictor::PredictorParams predictor;
    acm::AcmParams acm;
    Tensor projection;  // D x teacher width
    WaypointHead head;

    static ModelParams init(const RunConfig& cfg, RngState& rng);
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct ModelGrads {
    predictor::PredictorGrads predictor;
    acm::AcmGrads acm;
    Tensor projection;
    WaypointHead head;

    static ModelGrads zeros_like(const ModelParams& params);
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

struct LossBreakdown {
    double total = 0.0;
    double wp = 0.0;
    double score = 0.0;
    double lambda = 0.0;
};

//! One joint forward/backward pass over a scene. The auxiliary pseudo-score
//! target is recomputed unless a cached copy is supplied (the teacher is
//! frozen, so it is a pure function of the scene). Pass grads = nullptr for
//! a loss-only evaluation.
LossBreakdown training_step(const Scene& scene, const Tensor& text_tokens, ModelParams& params,
                            const teacher::Teacher& teacher, const RunConfig& cfg,
                            double temperature, RngState* gumbel_rng, ModelGrads* grads,
                            const Tensor* cached_pseudo = nullptr);

//! Frozen text-token block shared by every scene, derived from teacher_seed.
Tensor make_text_tokens(const RunConfig& cfg);

struct TrainResult {
    std::vector<LossBreakdown> curve;  // one row per epoch, mean over scenes
    ModelParams params;
};

//! Plain SGD with a fixed step size and optional global-norm clipping.
//! Temperature anneals linearly from temperature_start to temperature_end.
TrainResult train(const std::vector<Scene>& dataset, const RunConfig& cfg,
                  const teacher::Teacher& teacher, ModelParams initial);

//! Mean predicted importance over generator-salient vs noise positions.
struct SalienceReport {
    double salient_mean = 0.0;
    double noise_mean = 0.0;
};
SalienceReport salience_report(const std::vector<Scene>& dataset, const ModelParams& params,
                               const RunConfig& cfg);

// Dataset directory layout: scene_NNNN.tnsr (tokens) plus scene_NNNN.json
// sidecar {seed, T, N, D, T_plus, salient_positions, waypoints}.
std::vector<Scene> make_dataset(const RunConfig& cfg);
void save_dataset(const std::string& dir, const std::vector<Scene>& scenes);
std::vector<Scene> load_dataset(const std::string& dir);

void write_loss_csv(std::ostream& os, const std::vector<LossBreakdown>& curve);

} // namespace storm::driving
