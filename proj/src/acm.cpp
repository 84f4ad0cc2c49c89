// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/acm.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace storm::acm {

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, RngState& rng) {
    Tensor t(std::move(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-a, a);
    return t;
}

Tensor take_rows(const Tensor& src, const std::vector<std::size_t>& rows) {
    const std::size_t d = src.extent(1);
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(src.data() + rows[i] * d, src.data() + (rows[i] + 1) * d, out.data() + i * d);
    }
    return out;
}

} // namespace

AcmParams AcmParams::init(std::size_t width, std::size_t head_dim, RngState& rng) {
    AcmParams p;
    p.wq = uniform_init({width, head_dim}, width, rng);
    p.wk = uniform_init({width, head_dim}, width, rng);
    p.wv = uniform_init({width, head_dim}, width, rng);
    p.wo = uniform_init({head_dim, width}, head_dim, rng);
    return p;
}

void AcmParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("acm.wq", wq);
    fn("acm.wk", wk);
    fn("acm.wv", wv);
    fn("acm.wo", wo);
}

AcmGrads AcmGrads::zeros_like(const AcmParams& p) {
    AcmGrads g;
    g.wq = Tensor::zeros(p.wq.shape());
    g.wk = Tensor::zeros(p.wk.shape());
    g.wv = Tensor::zeros(p.wv.shape());
    g.wo = Tensor::zeros(p.wo.shape());
    return g;
}

void AcmGrads::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("acm.wq", wq);
    fn("acm.wk", wk);
    fn("acm.wv", wv);
    fn("acm.wo", wo);
}

Partition partition_topk(const Tensor& tokens, const Tensor& scores, std::size_t k) {
    if (tokens.rank() != 2) {
        throw ShapeError("partition_topk: tokens must be N x D, got " + tokens.shape_str());
    }
    const std::size_t n = tokens.extent(0);
    if (scores.size() != n) {
        throw ShapeError("partition_topk: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(n) + " tokens");
    }
    if (k < 1 || k >= n) {
        throw ConfigError("partition_topk: K must satisfy 1 <= K < N, got K=" +
                          std::to_string(k) + ", N=" + std::to_string(n));
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];  // stable keeps ties on the lower index
    });
    Partition part;
    part.anchor_indices.assign(order.begin(), order.begin() + k);
    part.context_indices.assign(order.begin() + k, order.end());
    std::sort(part.anchor_indices.begin(), part.anchor_indices.end());
    std::sort(part.context_indices.begin(), part.context_indices.end());
    part.anchors = take_rows(tokens, part.anchor_indices);
    part.context = take_rows(tokens, part.context_indices);
    return part;
}

Projected project_qkv(const Partition& part, const AcmParams& params, ProjectCache* cache) {
    ProjectCache local;
    ProjectCache& c = cache ? *cache : local;
    Tensor a_norm = layer_norm(part.anchors, &c.ln_anchors);
    Tensor c_norm = layer_norm(part.context, &c.ln_context);
    Projected out;
    out.q = matmul(a_norm, params.wq);
    out.k = matmul(c_norm, params.wk);
    out.v = matmul(c_norm, params.wv);
    return out;
}

Tensor assign(const Tensor& q, const Tensor& k, double temperature, RngState* rng) {
    Tensor logits = matmul_nt(q, k);
    scale_inplace(logits, 1.0 / std::sqrt(static_cast<double>(q.extent(1))));
    return gumbel_softmax(logits, temperature, rng, /*axis=*/0);
}

Tensor merge(const Partition& part, const Tensor& m_hard, const Tensor& v, const Tensor& wo) {
    Tensor pooled = matmul(m_hard, v);
    Tensor merged = matmul(pooled, wo);
    add_inplace(merged, part.anchors);
    return merged;
}

Tensor reduce_stack(const predictor::FrameStack& stack, const predictor::ImportanceScores& scores,
                    const AcmParams& params, std::size_t k, double temperature, RngState* rng,
                    MergeMode mode, ReduceCache* cache, std::vector<MergeResult>* results) {
    const std::size_t frames = stack.frames();
    const std::size_t n = stack.tokens_per_frame();
    const std::size_t d = stack.width();
    if (scores.s.size() != frames * n) {
        throw ShapeError("reduce_stack: " + std::to_string(scores.s.size()) + " scores for " +
                         std::to_string(frames * n) + " tokens");
    }
    ReduceCache local;
    ReduceCache& c = cache ? *cache : local;
    c.frames.clear();
    c.tokens_per_frame = n;

    Tensor z = layer_norm(stack.flattened(), &c.stack_ln);
    Tensor out({frames * k, d});
    for (std::size_t f = 0; f < frames; ++f) {
        Tensor frame_tokens({n, d});
        std::copy(z.data() + f * n * d, z.data() + (f + 1) * n * d, frame_tokens.data());
        Tensor frame_scores({n});
        std::copy(scores.s.data() + f * n, scores.s.data() + (f + 1) * n, frame_scores.data());

        FrameCache fc;
        fc.part = partition_topk(frame_tokens, frame_scores, k);
        fc.temperature = temperature;
        Tensor merged;
        MergeResult result;
        if (mode == MergeMode::AnchorsOnly) {
            merged = fc.part.anchors;
        } else {
            fc.proj = project_qkv(fc.part, params, &fc.project);
            fc.soft = assign(fc.proj.q, fc.proj.k, temperature, rng);
            fc.assign_used = mode == MergeMode::Hard ? ste_harden(fc.soft) : fc.soft;
            fc.pooled = matmul(fc.assign_used, fc.proj.v);
            merged = matmul(fc.pooled, params.wo);
            add_inplace(merged, fc.part.anchors);
            result.soft = fc.soft;
            result.hard = mode == MergeMode::Hard ? fc.assign_used : ste_harden(fc.soft);
        }
        result.merged = merged;
        std::copy(merged.data(), merged.data() + k * d, out.data() + f * k * d);
        if (results) results->push_back(std::move(result));
        c.frames.push_back(std::move(fc));
    }
    return out;
}

Tensor reduce_stack_backward(const Tensor& d_out, const AcmParams& params,
                             const ReduceCache& cache, MergeMode mode, AcmGrads& grads) {
    const std::size_t frames = cache.frames.size();
    const std::size_t n = cache.tokens_per_frame;
    const std::size_t d = params.wq.extent(0);
    const std::size_t k = d_out.extent(0) / frames;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(params.head_dim()));

    Tensor dz = Tensor::zeros({frames * n, d});
    for (std::size_t f = 0; f < frames; ++f) {
        const FrameCache& fc = cache.frames[f];
        Tensor d_merged({k, d});
        std::copy(d_out.data() + f * k * d, d_out.data() + (f + 1) * k * d, d_merged.data());

        Tensor d_anchors = d_merged;  // residual branch
        Tensor d_context;
        if (mode != MergeMode::AnchorsOnly) {
            add_inplace(grads.wo, matmul_tn(fc.pooled, d_merged));
            Tensor d_pooled = matmul_nt(d_merged, params.wo);
            Tensor d_assign = matmul_nt(d_pooled, fc.proj.v);
            Tensor d_v = matmul_tn(fc.assign_used, d_pooled);
            // Hardening backpropagates straight through to the soft scores.
            Tensor d_scaled = gumbel_softmax_backward(d_assign, fc.soft, fc.temperature, 0);
            scale_inplace(d_scaled, inv_sqrt_dh);
            Tensor d_q = matmul(d_scaled, fc.proj.k);
            Tensor d_k = matmul_tn(d_scaled, fc.proj.q);

            const Tensor& a_norm = fc.project.ln_anchors.normalized;
            const Tensor& c_norm = fc.project.ln_context.normalized;
            add_inplace(grads.wq, matmul_tn(a_norm, d_q));
            add_inplace(grads.wk, matmul_tn(c_norm, d_k));
            add_inplace(grads.wv, matmul_tn(c_norm, d_v));

            Tensor d_a_norm = matmul_nt(d_q, params.wq);
            Tensor d_c_norm = matmul_nt(d_k, params.wk);
            add_inplace(d_c_norm, matmul_nt(d_v, params.wv));
            add_inplace(d_anchors, layer_norm_backward(d_a_norm, fc.project.ln_anchors));
            d_context = layer_norm_backward(d_c_norm, fc.project.ln_context);
        }
        for (std::size_t i = 0; i < fc.part.anchor_indices.size(); ++i) {
            const std::size_t row = f * n + fc.part.anchor_indices[i];
            for (std::size_t j = 0; j < d; ++j) dz[row * d + j] += d_anchors.at2(i, j);
        }
        if (mode != MergeMode::AnchorsOnly) {
            for (std::size_t i = 0; i < fc.part.context_indices.size(); ++i) {
                const std::size_t row = f * n + fc.part.context_indices[i];
                for (std::size_t j = 0; j < d; ++j) dz[row * d + j] += d_context.at2(i, j);
            }
        }
    }
    return layer_norm_backward(dz, cache.stack_ln);
}

void write_merge_trace(std::ostream& os, const std::vector<MergeResult>& results,
                       const std::vector<Partition>& partitions) {
    using nlohmann::ordered_json;
    for (std::size_t f = 0; f < results.size(); ++f) {
        const MergeResult& r = results[f];
        const Partition& p = partitions[f];
        ordered_json rec;
        rec["tau"] = f + 1;
        rec["anchor_indices"] = p.anchor_indices;
        ordered_json assigns = ordered_json::object();
        if (r.hard.rank() == 2) {
            for (std::size_t c = 0; c < r.hard.extent(1); ++c) {
                for (std::size_t a = 0; a < r.hard.extent(0); ++a) {
                    if (r.hard.at2(a, c) == 1.0) {
                        assigns[std::to_string(p.context_indices[c])] = p.anchor_indices[a];
                        break;
                    }
                }
            }
        }
        rec["assignments"] = assigns;
        os << rec.dump() << '\n';
    }
}

} // namespace storm::acm
