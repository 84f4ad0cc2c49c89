// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/ops.hpp"
#include "storm/rng.hpp"
#include "storm/tensor.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace storm::predictor {

//! The T x N x D block of visual tokens for the most recent T frames.
struct FrameStack {
    Tensor tokens;  // [T x N x D]

    FrameStack() = default;
    explicit FrameStack(Tensor t);

    std::size_t frames() const { return tokens.extent(0); }
    std::size_t tokens_per_frame() const { return tokens.extent(1); }
    std::size_t width() const { return tokens.extent(2); }
    //! The (T*N) x D matrix view of the stack, frame-major.
    Tensor flattened() const;
};

//! Temporal sliding window: radius ell, dilation kappa in [1, ell+1].
struct WindowSpec {
    std::size_t radius = 1;
    std::size_t dilation = 1;

    std::size_t width() const { return 2 * radius + 1; }
    void validate() const;
};

//! Frame indices (tau - ell*kappa, ..., tau, ..., tau + ell*kappa) stepping by
//! kappa, clamped into [1, T] by replication. tau is 1-based; always returns
//! exactly 2*ell + 1 indices.
std::vector<std::size_t> window_indices(std::size_t tau, std::size_t frames,
                                        const WindowSpec& spec);

//! Vertical concatenation of the normalized stack's rows at the window
//! frames, in window order. z_norm is the flattened (T*N) x D matrix.
Tensor gather_window(const Tensor& z_norm, std::size_t tau, std::size_t frames,
                     const WindowSpec& spec);

//! Which token-mixing graph the score predictor runs.
enum class MixerMode {
    SlidingWindow,  // per-frame windowed mixing
    FullSequence,   // one mixing over all T*N tokens (no-window ablation)
};

struct MixerBlockParams {
    Tensor w1;  // sliding: [2|W|N x |W|N]; full: [2TN x TN]
    Tensor w2;  // sliding: [N x 2|W|N];   full: [TN x 2TN]
    Tensor w3;  // [2D x D]
    Tensor w4;  // [D x 2D]
};

struct PredictorParams {
    std::vector<MixerBlockParams> blocks;
    Tensor w5;  // [1 x D] score head, no bias
    MixerMode mode = MixerMode::SlidingWindow;

    static PredictorParams init(std::size_t frames, std::size_t tokens_per_frame,
                                std::size_t width, const WindowSpec& spec, std::size_t n_blocks,
                                MixerMode mode, RngState& rng);

    std::size_t block_count() const { return blocks.size(); }
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

//! Length-T*N importance score vector, frame-major.
struct ImportanceScores {
    Tensor s;  // [T*N]

    //! Frame view s_tau (tau 1-based), N entries.
    Tensor frame_view(std::size_t tau, std::size_t frames) const;
};

struct MixerOptions {
    //! Evaluate the token-mixing MLP only at every kappa-th frame; skipped
    //! frames keep their residual value. Matches the (T/kappa) census.
    bool strided_tau = false;
};

struct TokenMixCache {
    std::vector<std::size_t> window;  // 1-based frames
    Tensor gathered;                  // |W|N x D
    Tensor pre_gelu;                  // 2|W|N x D
    Tensor activated;                 // 2|W|N x D
};

//! H_tau = Z_tau + W2 * gelu(W1 * gather_window(z_norm, tau)).
Tensor token_mix(const Tensor& z_norm, std::size_t tau, std::size_t frames,
                 const WindowSpec& spec, const Tensor& w1, const Tensor& w2,
                 TokenMixCache* cache = nullptr);

//! Accumulates gradients of one frame's token mixing. d_h is the cotangent of
//! H_tau; token gradients scatter back into d_z (T*N x D).
void token_mix_backward(const Tensor& d_h, const TokenMixCache& cache, std::size_t tau,
                        const Tensor& w1, const Tensor& w2, Tensor& d_z, Tensor& d_w1,
                        Tensor& d_w2);

struct ChannelMixCache {
    LayerNormCache ln;
    Tensor pre_gelu;   // TN x 2D
    Tensor activated;  // TN x 2D
};

//! Per-token residual MLP over the embedding axis. h is the (T*N) x D stack
//! of mixed tokens; output keeps that layout.
Tensor channel_mix(const Tensor& h, const Tensor& w3, const Tensor& w4,
                   ChannelMixCache* cache = nullptr);
Tensor channel_mix_backward(const Tensor& d_u, const ChannelMixCache& cache, const Tensor& w3,
                            const Tensor& w4, Tensor& d_w3, Tensor& d_w4);

struct PredictorCache {
    struct Block {
        LayerNormCache ln;                  // normalization of the block input
        Tensor z_norm;                      // its output, TN x D
        std::vector<std::size_t> taus;      // evaluated frames (1-based)
        std::vector<TokenMixCache> mixes;   // one per evaluated tau
        Tensor full_pre_gelu;               // FullSequence mode only
        Tensor full_activated;
        ChannelMixCache channel;
    };
    std::vector<Block> blocks;
    LayerNormCache head_ln;  // block-free path only
    Tensor head_in;          // input of the score head, TN x D
    std::size_t frames = 0;
    std::size_t tokens_per_frame = 0;
};

struct PredictorGrads {
    std::vector<MixerBlockParams> blocks;
    Tensor w5;

    static PredictorGrads zeros_like(const PredictorParams& p);
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

//! Full forward pass: L blocks of {token normalization, windowed token
//! mixing, channel mixing} then the linear score head. Output is frame-major.
ImportanceScores predict_importance(const FrameStack& stack, const PredictorParams& params,
                                    const WindowSpec& spec, const MixerOptions& opts = {},
                                    PredictorCache* cache = nullptr);

//! Backward through the full predictor. Returns the cotangent of the raw
//! flattened stack; parameter gradients accumulate into `grads`.
Tensor predict_importance_backward(const Tensor& d_scores, const PredictorParams& params,
                                   const WindowSpec& spec, const MixerOptions& opts,
                                   const PredictorCache& cache, PredictorGrads& grads);

//! Drop-in interface for alternative scorers in the ablation harness.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual ImportanceScores score(const FrameStack& stack) const = 0;
};

class MixerScorer final : public Scorer {
public:
    MixerScorer(PredictorParams params, WindowSpec spec, MixerOptions opts)
        : params_(std::move(params)), spec_(spec), opts_(opts) {}
    ImportanceScores score(const FrameStack& stack) const override {
        return predict_importance(stack, params_, spec_, opts_);
    }

private:
    PredictorParams params_;
    WindowSpec spec_;
    MixerOptions opts_;
};

} // namespace storm::predictor
