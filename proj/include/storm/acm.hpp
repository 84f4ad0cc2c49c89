// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/ops.hpp"
#include "storm/predictor.hpp"
#include "storm/rng.hpp"
#include "storm/tensor.hpp"

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace storm::acm {

//! One frame's split into anchors (top-K by score) and context (the rest).
//! Token indices are 0-based positions within the frame.
struct Partition {
    Tensor anchors;  // K x D
    Tensor context;  // (N-K) x D
    std::vector<std::size_t> anchor_indices;
    std::vector<std::size_t> context_indices;
};

//! Projections shared across frames. Single head of width head_dim.
struct AcmParams {
    Tensor wq, wk, wv;  // D x head_dim
    Tensor wo;          // head_dim x D

    static AcmParams init(std::size_t width, std::size_t head_dim, RngState& rng);
    std::size_t head_dim() const { return wq.extent(1); }
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

//! Per-frame assignment and merge outputs.
struct MergeResult {
    Tensor soft;    // K x (N-K), columns sum to 1
    Tensor hard;    // K x (N-K), one-hot columns
    Tensor merged;  // K x D
};

enum class MergeMode { Hard, Soft, AnchorsOnly };

//! Anchors are the K highest-scoring tokens; ties prefer the lower token
//! index. Both index lists stay in ascending token order.
Partition partition_topk(const Tensor& tokens, const Tensor& scores, std::size_t k);

struct ProjectCache {
    LayerNormCache ln_anchors;
    LayerNormCache ln_context;
};

struct Projected {
    Tensor q;  // K x head_dim
    Tensor k;  // (N-K) x head_dim
    Tensor v;  // (N-K) x head_dim
};

//! Q from normalized anchors, K/V from normalized context.
Projected project_qkv(const Partition& part, const AcmParams& params,
                      ProjectCache* cache = nullptr);

//! Soft assignment M: gumbel_softmax over anchors of head_dim^{-1/2} * Q K^T.
Tensor assign(const Tensor& q, const Tensor& k, double temperature, RngState* rng);

//! Residual merge: merged = anchors + (m_hard * v) * wo. Anchors with no
//! assigned context keep their input rows bit-identically.
Tensor merge(const Partition& part, const Tensor& m_hard, const Tensor& v, const Tensor& wo);

struct FrameCache {
    Partition part;
    ProjectCache project;
    Projected proj;
    Tensor soft;
    Tensor assign_used;  // the matrix that actually multiplied V
    Tensor pooled;       // assign_used * v
    double temperature = 1.0;
};

struct ReduceCache {
    std::vector<FrameCache> frames;
    LayerNormCache stack_ln;
    std::size_t tokens_per_frame = 0;
};

struct AcmGrads {
    Tensor wq, wk, wv, wo;

    static AcmGrads zeros_like(const AcmParams& p);
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
};

//! Full reduction: normalize the stack, then per frame partition, project,
//! assign, harden, merge; concatenate merged anchors frame-major (T*K x D).
Tensor reduce_stack(const predictor::FrameStack& stack, const predictor::ImportanceScores& scores,
                    const AcmParams& params, std::size_t k, double temperature, RngState* rng,
                    MergeMode mode = MergeMode::Hard, ReduceCache* cache = nullptr,
                    std::vector<MergeResult>* results = nullptr);

//! Backward through the reduction. d_out is the cotangent of the T*K x D
//! output; returns the cotangent of the raw flattened stack. The hardening
//! step backpropagates straight through to the soft scores.
Tensor reduce_stack_backward(const Tensor& d_out, const AcmParams& params,
                             const ReduceCache& cache, MergeMode mode, AcmGrads& grads);

//! One JSON record per frame: {"tau":..., "anchor_indices":[...],
//! "assignments":{context_index: anchor_index}}. tau is 1-based.
void write_merge_trace(std::ostream& os, const std::vector<MergeResult>& results,
                       const std::vector<Partition>& partitions);

} // namespace storm::acm
