// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/driving.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>

namespace storm::driving {

namespace fs = std::filesystem;

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, RngState& rng) {
    Tensor t(std::move(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-a, a);
    return t;
}

//! Noise with zero mean and variance noise_scale^2.
double noise_sample(RngState& rng, double noise_scale) {
    constexpr double kSqrt3 = 1.7320508075688772935;
    return rng.next_uniform(-kSqrt3 * noise_scale, kSqrt3 * noise_scale);
}

//! Trajectory features plus the marker component; the per-slot phase keeps
//! salient tokens distinct tokens rather than duplicates.
void fill_salient_token(double* token, std::size_t width, double speed, double turn_rate,
                        std::size_t tau, std::size_t slot, const SceneConfig& cfg) {
    std::fill(token, token + width, 0.0);
    const double phase =
        static_cast<double>(tau) * turn_rate + 0.9 * static_cast<double>(slot);
    token[1] = speed * std::cos(turn_rate);
    token[2] = speed * std::sin(turn_rate);
    token[3] = turn_rate * cfg.marker_scale;
    token[4] = std::sin(phase);
    token[5] = std::cos(phase);
    if (cfg.marker_direction.size() == width) {
        for (std::size_t c = 0; c < width; ++c) {
            token[c] += cfg.marker_scale * cfg.marker_direction[c];
        }
    } else {
        token[0] = cfg.marker_scale;
    }
}

template <typename ParamPack>
std::vector<Tensor*> tensors_of(ParamPack& pack) {
    std::vector<Tensor*> out;
    pack.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

} // namespace

SceneConfig SceneConfig::from_run(const RunConfig& cfg) {
    SceneConfig s;
    s.frames = cfg.frames;
    s.tokens_per_frame = cfg.tokens_per_frame;
    s.width = cfg.embed_dim;
    s.horizon = cfg.waypoint_horizon;
    s.salient_per_frame = cfg.salient_per_frame;
    s.noise_scale = cfg.noise_scale;
    return s;
}

void SceneConfig::validate() const {
    if (width < 6) throw ConfigError("scene width must be >= 6 for the latent channels");
    if (salient_per_frame > tokens_per_frame) {
        throw ConfigError("salient_per_frame " + std::to_string(salient_per_frame) +
                          " exceeds tokens_per_frame " + std::to_string(tokens_per_frame));
    }
    if (frames < 1 || horizon < 1) throw ConfigError("scene frames/horizon out of range");
}

Scene make_scene(double speed, double turn_rate,
                 const std::vector<std::vector<std::size_t>>& salient_positions,
                 const SceneConfig& cfg, RngState noise_rng) {
    cfg.validate();
    if (salient_positions.size() != cfg.frames) {
        throw ConfigError("salient position list must cover every frame");
    }
    Scene scene;
    scene.seed = noise_rng.seed;
    scene.tokens = Tensor({cfg.frames, cfg.tokens_per_frame, cfg.width});
    scene.salient_mask = Tensor({cfg.frames, cfg.tokens_per_frame});

    for (std::size_t f = 0; f < cfg.frames; ++f) {
        for (std::size_t pos : salient_positions[f]) {
            if (pos >= cfg.tokens_per_frame) {
                throw ConfigError("salient position out of range");
            }
            scene.salient_mask.at2(f, pos) = 1.0;
        }
    }
    for (std::size_t f = 0; f < cfg.frames; ++f) {
        for (std::size_t n = 0; n < cfg.tokens_per_frame; ++n) {
            double* token = scene.tokens.data() + (f * cfg.tokens_per_frame + n) * cfg.width;
            if (scene.salient_mask.at2(f, n) == 1.0) {
                fill_salient_token(token, cfg.width, speed, turn_rate, f + 1, n, cfg);
            } else {
                for (std::size_t c = 0; c < cfg.width; ++c) {
                    token[c] = noise_sample(noise_rng, cfg.noise_scale);
                }
            }
        }
    }

    // Waypoints in the ego frame of the current step: constant speed and turn
    // rate integrated forward.
    scene.waypoints = Tensor({cfg.horizon, 2});
    double x = 0.0, y = 0.0;
    for (std::size_t j = 0; j < cfg.horizon; ++j) {
        const double heading = turn_rate * static_cast<double>(j + 1);
        x += speed * std::cos(heading);
        y += speed * std::sin(heading);
        scene.waypoints.at2(j, 0) = x;
        scene.waypoints.at2(j, 1) = y;
    }
    return scene;
}

Scene synthesize_scene(const RngState& rng, const SceneConfig& cfg) {
    cfg.validate();
    RngState latent = rng.fork(1);
    const double speed = latent.next_uniform(0.6, 1.4);
    const double turn_rate = latent.next_uniform(-0.25, 0.25);
    std::vector<std::vector<std::size_t>> positions(cfg.frames);
    for (std::size_t f = 0; f < cfg.frames; ++f) {
        // partial Fisher-Yates over token slots
        std::vector<std::size_t> slots(cfg.tokens_per_frame);
        std::iota(slots.begin(), slots.end(), 0);
        for (std::size_t i = 0; i < cfg.salient_per_frame; ++i) {
            const std::size_t j =
                i + static_cast<std::size_t>(latent.next_uniform() *
                                             static_cast<double>(slots.size() - i));
            std::swap(slots[i], slots[std::min(j, slots.size() - 1)]);
            positions[f].push_back(slots[i]);
        }
        std::sort(positions[f].begin(), positions[f].end());
    }
    Scene scene = make_scene(speed, turn_rate, positions, cfg, rng.fork(2));
    scene.seed = rng.seed;
    return scene;
}

void resample_noise_tokens(Scene& scene, const SceneConfig& cfg, RngState& rng) {
    for (std::size_t f = 0; f < cfg.frames; ++f) {
        for (std::size_t n = 0; n < cfg.tokens_per_frame; ++n) {
            if (scene.salient_mask.at2(f, n) == 1.0) continue;
            double* token = scene.tokens.data() + (f * cfg.tokens_per_frame + n) * cfg.width;
            for (std::size_t c = 0; c < cfg.width; ++c) {
                token[c] = noise_sample(rng, cfg.noise_scale);
            }
        }
    }
}

WaypointHead WaypointHead::init(std::size_t width, std::size_t hidden, std::size_t horizon,
                                RngState& rng) {
    WaypointHead h;
    h.w1 = uniform_init({width, hidden}, width, rng);
    h.b1 = Tensor::zeros({1, hidden});
    h.w2 = uniform_init({hidden, 2 * horizon}, hidden, rng);
    h.b2 = Tensor::zeros({1, 2 * horizon});
    return h;
}

WaypointHead WaypointHead::zeros_like(const WaypointHead& other) {
    WaypointHead h;
    h.w1 = Tensor::zeros(other.w1.shape());
    h.b1 = Tensor::zeros(other.b1.shape());
    h.w2 = Tensor::zeros(other.w2.shape());
    h.b2 = Tensor::zeros(other.b2.shape());
    return h;
}

void WaypointHead::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("head.w1", w1);
    fn("head.b1", b1);
    fn("head.w2", w2);
    fn("head.b2", b2);
}

Tensor predict_waypoints(const Tensor& decoder_outputs, const WaypointHead& head,
                         WaypointCache* cache) {
    if (decoder_outputs.rank() != 2 || decoder_outputs.extent(1) != head.w1.extent(0)) {
        throw ShapeError("predict_waypoints: decoder outputs " + decoder_outputs.shape_str() +
                         " do not match head input width " +
                         std::to_string(head.w1.extent(0)));
    }
    const std::size_t rows = decoder_outputs.extent(0);
    const std::size_t width = decoder_outputs.extent(1);
    WaypointCache local;
    WaypointCache& c = cache ? *cache : local;
    c.pooled = Tensor({1, width});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < width; ++j) c.pooled[j] += decoder_outputs.at2(r, j);
    }
    scale_inplace(c.pooled, 1.0 / static_cast<double>(rows));
    c.pooled_rows = rows;

    c.pre = matmul(c.pooled, head.w1);
    add_inplace(c.pre, head.b1);
    c.act = gelu(c.pre);
    Tensor out = matmul(c.act, head.w2);
    add_inplace(out, head.b2);
    return out.reshaped({head.b2.size() / 2, 2});
}

Tensor predict_waypoints_backward(const Tensor& d_waypoints, const WaypointHead& head,
                                  const WaypointCache& cache, WaypointHead& grads) {
    Tensor d_flat = d_waypoints.reshaped({1, d_waypoints.size()});
    add_inplace(grads.b2, d_flat);
    add_inplace(grads.w2, matmul_tn(cache.act, d_flat));
    Tensor d_act = matmul_nt(d_flat, head.w2);
    Tensor d_pre = gelu_backward(d_act, cache.pre);
    add_inplace(grads.b1, d_pre);
    add_inplace(grads.w1, matmul_tn(cache.pooled, d_pre));
    Tensor d_pooled = matmul_nt(d_pre, head.w1);

    const std::size_t rows = cache.pooled_rows;
    const std::size_t width = d_pooled.size();
    Tensor d_out({rows, width});
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < width; ++j) d_out.at2(r, j) = d_pooled[j] * inv;
    }
    return d_out;
}

ModelParams ModelParams::init(const RunConfig& cfg, RngState& rng) {
    cfg.validate();
    ModelParams p;
    p.predictor = predictor::PredictorParams::init(cfg.frames, cfg.tokens_per_frame,
                                                   cfg.embed_dim, cfg.window_spec(),
                                                   cfg.mixer_blocks, cfg.mixer_mode(), rng);
    p.acm = acm::AcmParams::init(cfg.embed_dim, cfg.head_dim, rng);
    p.projection = uniform_init({cfg.embed_dim, cfg.teacher_width}, cfg.embed_dim, rng);
    p.head = WaypointHead::init(cfg.teacher_width, cfg.head_hidden, cfg.waypoint_horizon, rng);
    return p;
}

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    predictor.for_each(fn);
    acm.for_each(fn);
    fn("projection", projection);
    head.for_each(fn);
}

ModelGrads ModelGrads::zeros_like(const ModelParams& params) {
    ModelGrads g;
    g.predictor = predictor::PredictorGrads::zeros_like(params.predictor);
    g.acm = acm::AcmGrads::zeros_like(params.acm);
    g.projection = Tensor::zeros(params.projection.shape());
    g.head = WaypointHead::zeros_like(params.head);
    return g;
}

void ModelGrads::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    predictor.for_each(fn);
    acm.for_each(fn);
    fn("projection", projection);
    head.for_each(fn);
}

Tensor make_text_tokens(const RunConfig& cfg) {
    RngState rng = RngState(cfg.teacher_seed).fork(0x74657874);
    Tensor text({cfg.text_tokens, cfg.teacher_width});
    for (std::size_t i = 0; i < text.size(); ++i) text[i] = rng.next_uniform(-1.0, 1.0);
    return text;
}

LossBreakdown training_step(const Scene& scene, const Tensor& text_tokens, ModelParams& params,
                            const teacher::Teacher& teacher, const RunConfig& cfg,
                            double temperature, RngState* gumbel_rng, ModelGrads* grads,
                            const Tensor* cached_pseudo) {
    const predictor::FrameStack stack(scene.tokens);
    const predictor::WindowSpec spec = cfg.window_spec();
    const predictor::MixerOptions opts{cfg.strided_tau};
    const acm::MergeMode mode = cfg.merge_mode_enum();

    // main path
    predictor::PredictorCache pred_cache;
    predictor::ImportanceScores scores =
        predict_importance(stack, params.predictor, spec, opts, grads ? &pred_cache : nullptr);

    acm::ReduceCache acm_cache;
    Tensor reduced = acm::reduce_stack(stack, scores, params.acm, cfg.anchors_per_frame,
                                       temperature, gumbel_rng, mode,
                                       grads ? &acm_cache : nullptr);

    Tensor visual = matmul(reduced, params.projection);
    teacher::TokenSequence seq;
    seq.visual = visual;
    seq.text = text_tokens;
    teacher::DecodeCache decode_cache;
    teacher::DecodeOutput decoded =
        decode(seq, teacher.decoder, /*capture_attention=*/false,
               grads ? &decode_cache : nullptr);

    WaypointCache wp_cache;
    Tensor waypoints =
        predict_waypoints(decoded.outputs, params.head, grads ? &wp_cache : nullptr);
    const double loss_wp = l1_loss(waypoints, scene.waypoints);

    // auxiliary path (teacher frozen; its output is a constant target)
    Tensor pseudo;
    if (cached_pseudo) {
        pseudo = *cached_pseudo;
    } else {
        pseudo = auxiliary_pass(stack, text_tokens, teacher).scores;
    }
    const double loss_score = l1_loss(scores.s, pseudo);

    LossBreakdown loss;
    loss.wp = loss_wp;
    loss.score = loss_score;
    loss.lambda = cfg.lambda;
    loss.total = loss_wp + cfg.lambda * loss_score;

    if (grads) {
        // waypoint branch
        Tensor d_wp = l1_loss_backward(waypoints, scene.waypoints);
        Tensor d_decoded = predict_waypoints_backward(d_wp, params.head, wp_cache, grads->head);
        Tensor d_seq = decode_backward(d_decoded, teacher.decoder, decode_cache);

        const std::size_t vis_rows = visual.extent(0);
        Tensor d_visual({vis_rows, visual.extent(1)});
        std::copy(d_seq.data(), d_seq.data() + d_visual.size(), d_visual.data());

        add_inplace(grads->projection, matmul_tn(reduced, d_visual));
        Tensor d_reduced = matmul_nt(d_visual, params.projection);
        acm::reduce_stack_backward(d_reduced, params.acm, acm_cache, mode, grads->acm);

        // score branch; top-K selection passes no gradient into the scores
        Tensor d_scores = l1_loss_backward(scores.s, pseudo);
        scale_inplace(d_scores, cfg.lambda);
        predict_importance_backward(d_scores, params.predictor, spec, opts, pred_cache,
                                    grads->predictor);
    }
    return loss;
}

TrainResult train(const std::vector<Scene>& dataset, const RunConfig& cfg,
                  const teacher::Teacher& teacher, ModelParams initial) {
    if (dataset.empty()) throw ConfigError("train: empty dataset");
    TrainResult result;
    result.params = std::move(initial);

    const Tensor text = make_text_tokens(cfg);
    const RngState gumbel_root(cfg.gumbel_seed);

    // The teacher is frozen, so each scene's pseudo target is a pure function
    // of the scene; computed once and reused across epochs.
    std::vector<Tensor> pseudo(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        pseudo[i] = auxiliary_pass(predictor::FrameStack(dataset[i].tokens), text, teacher).scores;
    }

    std::vector<Tensor*> params_view = tensors_of(result.params);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double t = cfg.epochs > 1
                             ? static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1)
                             : 0.0;
        const double temperature =
            cfg.temperature_start + (cfg.temperature_end - cfg.temperature_start) * t;

        double sum_wp = 0.0, sum_score = 0.0;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            // per-scene noise stream, replayed every epoch: with a zero
            // learning rate and a fixed temperature the loss curve is
            // exactly constant
            RngState gumbel = gumbel_root.fork(i);
            ModelGrads grads = ModelGrads::zeros_like(result.params);
            const LossBreakdown loss =
                training_step(dataset[i], text, result.params, teacher, cfg, temperature,
                              &gumbel, &grads, &pseudo[i]);
            sum_wp += loss.wp;
            sum_score += loss.score;

            std::vector<Tensor*> grads_view = tensors_of(grads);
            if (cfg.grad_clip > 0.0) {
                double sq = 0.0;
                for (Tensor* g : grads_view) {
                    for (std::size_t j = 0; j < g->size(); ++j) sq += (*g)[j] * (*g)[j];
                }
                const double norm = std::sqrt(sq);
                if (norm > cfg.grad_clip) {
                    const double s = cfg.grad_clip / norm;
                    for (Tensor* g : grads_view) scale_inplace(*g, s);
                }
            }
            for (std::size_t p = 0; p < params_view.size(); ++p) {
                axpy_inplace(*params_view[p], -cfg.learning_rate, *grads_view[p]);
            }
        }
        LossBreakdown epoch_loss;
        epoch_loss.wp = sum_wp / static_cast<double>(dataset.size());
        epoch_loss.score = sum_score / static_cast<double>(dataset.size());
        epoch_loss.lambda = cfg.lambda;
        epoch_loss.total = epoch_loss.wp + cfg.lambda * epoch_loss.score;
        result.curve.push_back(epoch_loss);
    }
    return result;
}

SalienceReport salience_report(const std::vector<Scene>& dataset, const ModelParams& params,
                               const RunConfig& cfg) {
    SalienceReport report;
    double salient_sum = 0.0, noise_sum = 0.0;
    std::size_t salient_n = 0, noise_n = 0;
    for (const Scene& scene : dataset) {
        const predictor::FrameStack stack(scene.tokens);
        const predictor::ImportanceScores scores = predict_importance(
            stack, params.predictor, cfg.window_spec(), {cfg.strided_tau});
        const std::size_t n = cfg.tokens_per_frame;
        for (std::size_t f = 0; f < cfg.frames; ++f) {
            for (std::size_t tok = 0; tok < n; ++tok) {
                const double s = scores.s[f * n + tok];
                if (scene.salient_mask.at2(f, tok) == 1.0) {
                    salient_sum += s;
                    ++salient_n;
                } else {
                    noise_sum += s;
                    ++noise_n;
                }
            }
        }
    }
    report.salient_mean = salient_n ? salient_sum / static_cast<double>(salient_n) : 0.0;
    report.noise_mean = noise_n ? noise_sum / static_cast<double>(noise_n) : 0.0;
    return report;
}

std::vector<Scene> make_dataset(const RunConfig& cfg) {
    SceneConfig scfg = SceneConfig::from_run(cfg);
    // tokens aligned with the frozen backbone, as a pretrained encoder's
    // would be
    const teacher::Teacher frozen(cfg.teacher_config(), cfg.embed_dim, cfg.teacher_seed);
    scfg.marker_direction = frozen.preferred_token_direction();
    std::vector<Scene> scenes;
    scenes.reserve(cfg.scenes);
    RngState data(cfg.data_seed);
    for (std::size_t i = 0; i < cfg.scenes; ++i) {
        scenes.push_back(synthesize_scene(data.fork(i), scfg));
    }
    return scenes;
}

void save_dataset(const std::string& dir, const std::vector<Scene>& scenes) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const Scene& s = scenes[i];
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04zu", i);
        save_tensor(dir + "/" + name + ".tnsr", s.tokens);

        nlohmann::ordered_json sidecar;
        sidecar["seed"] = s.seed;
        sidecar["T"] = s.tokens.extent(0);
        sidecar["N"] = s.tokens.extent(1);
        sidecar["D"] = s.tokens.extent(2);
        sidecar["T_plus"] = s.waypoints.extent(0);
        nlohmann::ordered_json positions = nlohmann::ordered_json::array();
        for (std::size_t f = 0; f < s.tokens.extent(0); ++f) {
            nlohmann::ordered_json row = nlohmann::ordered_json::array();
            for (std::size_t n = 0; n < s.tokens.extent(1); ++n) {
                if (s.salient_mask.at2(f, n) == 1.0) row.push_back(n);
            }
            positions.push_back(row);
        }
        sidecar["salient_positions"] = positions;
        nlohmann::ordered_json wps = nlohmann::ordered_json::array();
        for (std::size_t j = 0; j < s.waypoints.extent(0); ++j) {
            wps.push_back({s.waypoints.at2(j, 0), s.waypoints.at2(j, 1)});
        }
        sidecar["waypoints"] = wps;

        std::ofstream os(dir + "/" + name + ".json");
        os << sidecar.dump(2) << '\n';
    }
}

std::vector<Scene> load_dataset(const std::string& dir) {
    std::vector<Scene> scenes;
    for (std::size_t i = 0;; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04zu", i);
        const std::string tnsr = dir + "/" + name + ".tnsr";
        const std::string json = dir + "/" + name + ".json";
        if (!fs::exists(tnsr)) break;
        Scene s;
        s.tokens = load_tensor(tnsr);
        std::ifstream is(json);
        if (!is) throw std::runtime_error("missing sidecar: " + json);
        nlohmann::json sidecar;
        is >> sidecar;
        s.seed = sidecar.at("seed").get<std::uint64_t>();
        const std::size_t frames = sidecar.at("T").get<std::size_t>();
        const std::size_t n = sidecar.at("N").get<std::size_t>();
        const std::size_t horizon = sidecar.at("T_plus").get<std::size_t>();
        s.salient_mask = Tensor({frames, n});
        const auto& positions = sidecar.at("salient_positions");
        for (std::size_t f = 0; f < frames; ++f) {
            for (const auto& pos : positions.at(f)) {
                s.salient_mask.at2(f, pos.get<std::size_t>()) = 1.0;
            }
        }
        s.waypoints = Tensor({horizon, 2});
        const auto& wps = sidecar.at("waypoints");
        for (std::size_t j = 0; j < horizon; ++j) {
            s.waypoints.at2(j, 0) = wps.at(j).at(0).get<double>();
            s.waypoints.at2(j, 1) = wps.at(j).at(1).get<double>();
        }
        scenes.push_back(std::move(s));
    }
    return scenes;
}

void write_loss_csv(std::ostream& os, const std::vector<LossBreakdown>& curve) {
    os << "epoch,wp,score,total\n";
    char buf[128];
    for (std::size_t e = 0; e < curve.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e + 1, curve[e].wp,
                      curve[e].score, curve[e].total);
        os << buf;
    }
}

} // namespace storm::driving
