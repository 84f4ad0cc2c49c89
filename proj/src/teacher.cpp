// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/teacher.hpp"

#include "storm/rng.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace storm::teacher {

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, RngState& rng) {
    Tensor t(std::move(shape));
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-a, a);
    return t;
}

Tensor take_cols(const Tensor& src, std::size_t c0, std::size_t count) {
    const std::size_t rows = src.extent(0), cols = src.extent(1);
    Tensor out({rows, count});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(src.data() + r * cols + c0, src.data() + r * cols + c0 + count,
                  out.data() + r * count);
    }
    return out;
}

void add_cols(Tensor& dst, std::size_t c0, const Tensor& src) {
    const std::size_t rows = dst.extent(0), cols = dst.extent(1), count = src.extent(1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) dst[r * cols + c0 + c] += src[r * count + c];
    }
}

void hash_tensor(std::uint64_t& h, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t[i];
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xFFull;
            h *= 0x100000001B3ull;  // FNV-1a prime
        }
    }
}

} // namespace

ToyDecoder::ToyDecoder(const ToyDecoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.width % cfg.heads != 0) {
        throw ConfigError("decoder width " + std::to_string(cfg.width) +
                          " not divisible by head count " + std::to_string(cfg.heads));
    }
    RngState rng(seed);
    const std::size_t w = cfg.width, h = cfg.hidden();
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        BlockWeights blk;
        blk.wq = uniform_init({w, w}, w, rng);
        blk.wk = uniform_init({w, w}, w, rng);
        blk.wv = uniform_init({w, w}, w, rng);
        blk.wo = uniform_init({w, w}, w, rng);
        blk.wf1 = uniform_init({w, h}, w, rng);
        blk.wf2 = uniform_init({h, w}, h, rng);
        blocks_.push_back(std::move(blk));
    }
}

std::uint64_t ToyDecoder::checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV offset basis
    for (const BlockWeights& b : blocks_) {
        hash_tensor(h, b.wq);
        hash_tensor(h, b.wk);
        hash_tensor(h, b.wv);
        hash_tensor(h, b.wo);
        hash_tensor(h, b.wf1);
        hash_tensor(h, b.wf2);
    }
    return h;
}

Tensor TokenSequence::concatenated() const {
    if (!text) return visual;
    const std::size_t w = visual.extent(1);
    if (text->extent(1) != w) {
        throw ShapeError("token sequence: text width " + text->shape_str() +
                         " differs from visual width " + visual.shape_str());
    }
    Tensor out({total(), w});
    std::copy(visual.data(), visual.data() + visual.size(), out.data());
    std::copy(text->data(), text->data() + text->size(), out.data() + visual.size());
    return out;
}

std::vector<std::size_t> TokenSequence::visual_positions() const {
    std::vector<std::size_t> pos(visual.extent(0));
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    return pos;
}

DecodeOutput decode(const TokenSequence& seq, const ToyDecoder& model, bool capture_attention,
                    DecodeCache* cache) {
    const ToyDecoderConfig& cfg = model.config();
    Tensor x = seq.concatenated();
    if (x.extent(1) != cfg.width) {
        throw ConfigError("decode: token width " + std::to_string(x.extent(1)) +
                          " does not match model width " + std::to_string(cfg.width));
    }
    const std::size_t s = x.extent(0);
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    if (cache) cache->blocks.resize(cfg.depth);
    DecodeOutput out;
    for (std::size_t b = 0; b < cfg.depth; ++b) {
        const BlockWeights& w = model.blocks()[b];
        DecodeCache::Block* cb = cache ? &cache->blocks[b] : nullptr;
        const bool last = b + 1 == cfg.depth;

        LayerNormCache ln1_local;
        LayerNormCache& ln1 = cb ? cb->ln1 : ln1_local;
        Tensor a1 = layer_norm(x, &ln1);
        Tensor q = matmul(a1, w.wq);
        Tensor k = matmul(a1, w.wk);
        Tensor v = matmul(a1, w.wv);

        Tensor attn_cat({s, cfg.width});
        if (capture_attention && last) out.attention = Tensor({cfg.heads, s, s});
        if (cb) cb->probs.resize(cfg.heads);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            Tensor qh = take_cols(q, h * dh, dh);
            Tensor kh = take_cols(k, h * dh, dh);
            Tensor vh = take_cols(v, h * dh, dh);
            Tensor logits = matmul_nt(qh, kh);
            scale_inplace(logits, inv_sqrt_dh);
            Tensor probs = softmax(logits, /*axis=*/1);
            if (out.attention && last) {
                std::copy(probs.data(), probs.data() + s * s,
                          out.attention->data() + h * s * s);
            }
            Tensor oh = matmul(probs, vh);
            add_cols(attn_cat, h * dh, oh);
            if (cb) cb->probs[h] = std::move(probs);
        }
        if (cb) {
            cb->q = std::move(q);
            cb->k = std::move(k);
            cb->v = std::move(v);
        }
        add_inplace(x, matmul(attn_cat, w.wo));

        LayerNormCache ln2_local;
        LayerNormCache& ln2 = cb ? cb->ln2 : ln2_local;
        Tensor a2 = layer_norm(x, &ln2);
        Tensor pre = matmul(a2, w.wf1);
        Tensor act = gelu(pre);
        add_inplace(x, matmul(act, w.wf2));
        if (cb) cb->ffn_pre = std::move(pre);
    }
    LayerNormCache final_local;
    LayerNormCache& final_ln = cache ? cache->final_ln : final_local;
    out.outputs = layer_norm(x, &final_ln);
    return out;
}

Tensor decode_backward(const Tensor& d_out, const ToyDecoder& model, const DecodeCache& cache) {
    const ToyDecoderConfig& cfg = model.config();
    const std::size_t s = d_out.extent(0);
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor dx = layer_norm_backward(d_out, cache.final_ln);
    for (std::size_t b = cfg.depth; b-- > 0;) {
        const BlockWeights& w = model.blocks()[b];
        const DecodeCache::Block& cb = cache.blocks[b];

        // FFN sub-layer: x_out = x_mid + gelu(ln2(x_mid) wf1) wf2
        Tensor d_act = matmul_nt(dx, w.wf2);
        Tensor d_pre = gelu_backward(d_act, cb.ffn_pre);
        Tensor d_a2 = matmul_nt(d_pre, w.wf1);
        add_inplace(dx, layer_norm_backward(d_a2, cb.ln2));

        // attention sub-layer: x_mid = x_in + concat_h(P_h V_h) wo
        Tensor d_attn_cat = matmul_nt(dx, w.wo);
        Tensor d_q({s, cfg.width});
        Tensor d_k({s, cfg.width});
        Tensor d_v({s, cfg.width});
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            Tensor d_oh = take_cols(d_attn_cat, h * dh, dh);
            Tensor vh = take_cols(cb.v, h * dh, dh);
            Tensor qh = take_cols(cb.q, h * dh, dh);
            Tensor kh = take_cols(cb.k, h * dh, dh);
            const Tensor& probs = cb.probs[h];
            Tensor d_probs = matmul_nt(d_oh, vh);
            Tensor d_vh = matmul_tn(probs, d_oh);
            Tensor d_logits = softmax_backward(d_probs, probs, /*axis=*/1);
            scale_inplace(d_logits, inv_sqrt_dh);
            Tensor d_qh = matmul(d_logits, kh);
            Tensor d_kh = matmul_tn(d_logits, qh);
            add_cols(d_q, h * dh, d_qh);
            add_cols(d_k, h * dh, d_kh);
            add_cols(d_v, h * dh, d_vh);
        }
        Tensor d_a1 = matmul_nt(d_q, w.wq);
        add_inplace(d_a1, matmul_nt(d_k, w.wk));
        add_inplace(d_a1, matmul_nt(d_v, w.wv));
        add_inplace(dx, layer_norm_backward(d_a1, cb.ln1));
    }
    return dx;
}

PseudoSignals pseudo_scores(const Tensor& attention,
                            const std::vector<std::size_t>& visual_positions) {
    if (attention.rank() != 3) {
        throw ShapeError("pseudo_scores: attention must be heads x S x S, got " +
                         attention.shape_str());
    }
    const std::size_t heads = attention.extent(0);
    const std::size_t s = attention.extent(1);
    PseudoSignals sig;
    sig.full_column_means = Tensor({s});
    const double inv = 1.0 / static_cast<double>(heads * s);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < s; ++i) {
            const double* row = attention.data() + (h * s + i) * s;
            for (std::size_t j = 0; j < s; ++j) sig.full_column_means[j] += row[j];
        }
    }
    scale_inplace(sig.full_column_means, inv);
    sig.scores = Tensor({visual_positions.size()});
    for (std::size_t i = 0; i < visual_positions.size(); ++i) {
        if (visual_positions[i] >= s) {
            throw std::out_of_range("pseudo_scores: position " +
                                    std::to_string(visual_positions[i]) + " outside " +
                                    std::to_string(s) + " columns");
        }
        sig.scores[i] = sig.full_column_means[visual_positions[i]];
    }
    return sig;
}

Teacher::Teacher(const ToyDecoderConfig& cfg, std::size_t token_width, std::uint64_t seed)
    : decoder(cfg, seed) {
    RngState rng = RngState(seed).fork(0x70726F6A);  // separate stream for the projection
    aux_projection = uniform_init({token_width, cfg.width}, token_width, rng);
}

std::uint64_t Teacher::checksum() const {
    std::uint64_t h = decoder.checksum();
    hash_tensor(h, aux_projection);
    return h;
}

Tensor Teacher::preferred_token_direction() const {
    const ToyDecoderConfig& cfg = decoder.config();
    const std::size_t w = cfg.width, dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    // Token direction u whose queries score their own keys highest in the
    // captured (last) block: maximize u' P A P^T u over unit u, with
    // A = sum_h Wq_h Wk_h^T / sqrt(dh). The most positive eigendirection of
    // the symmetrized map, found by shift-and-power-iterate.
    const BlockWeights& blk = decoder.blocks().back();
    Tensor a_pool = Tensor::zeros({w, w});
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        Tensor wq_h = take_cols(blk.wq, h * dh, dh);
        Tensor wk_h = take_cols(blk.wk, h * dh, dh);
        Tensor a_h = matmul_nt(wq_h, wk_h);
        scale_inplace(a_h, inv_sqrt_dh);
        add_inplace(a_pool, a_h);
    }
    Tensor pa = matmul(aux_projection, a_pool);  // D x w
    Tensor b = matmul_nt(pa, aux_projection);    // D x D

    const std::size_t d = aux_projection.extent(0);
    Tensor sym({d, d});
    double fro = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            sym.at2(i, j) = 0.5 * (b.at2(i, j) + b.at2(j, i));
        }
    }
    for (std::size_t i = 0; i < sym.size(); ++i) fro += sym[i] * sym[i];
    fro = std::sqrt(fro);
    for (std::size_t i = 0; i < d; ++i) sym.at2(i, i) += fro;  // shift past negatives

    Tensor v = Tensor::full({d, 1}, 1.0 / std::sqrt(static_cast<double>(d)));
    for (int iter = 0; iter < 100; ++iter) {
        Tensor next = matmul(sym, v);
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm += next[i] * next[i];
        norm = std::sqrt(norm);
        if (norm == 0.0) break;
        scale_inplace(next, 1.0 / norm);
        v = std::move(next);
    }
    return v.reshaped({d});
}

PseudoSignals auxiliary_pass(const predictor::FrameStack& stack,
                             const std::optional<Tensor>& text, const Teacher& teacher) {
    TokenSequence seq;
    seq.visual = matmul(stack.flattened(), teacher.aux_projection);
    seq.text = text;
    DecodeOutput out = decode(seq, teacher.decoder, /*capture_attention=*/true);
    return pseudo_scores(*out.attention, seq.visual_positions());
}

} // namespace storm::teacher
