// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/ops.hpp"
#include "storm/predictor.hpp"
#include "storm/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace storm::teacher {

struct ToyDecoderConfig {
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t width = 128;
    std::size_t ffn_mult = 4;

    std::size_t head_dim() const { return width / heads; }
    std::size_t hidden() const { return ffn_mult * width; }
};

struct BlockWeights {
    Tensor wq, wk, wv, wo;  // width x width
    Tensor wf1;             // width x hidden
    Tensor wf2;             // hidden x width
};

//! Frozen pre-norm bidirectional self-attention stack standing in for the
//! LLM backbone. Weights are fixed at construction from the seed and never
//! change; forward passes are deterministic.
class ToyDecoder {
public:
    ToyDecoder(const ToyDecoderConfig& cfg, std::uint64_t seed);

    const ToyDecoderConfig& config() const { return cfg_; }
    const std::vector<BlockWeights>& blocks() const { return blocks_; }
    //! FNV-1a over the raw bit patterns of every weight.
    std::uint64_t checksum() const;

private:
    ToyDecoderConfig cfg_;
    std::vector<BlockWeights> blocks_;
};

//! Visual block first, then text. Attention column j maps back to visual
//! token j for j < visual rows, text token j - visual_rows otherwise.
struct TokenSequence {
    Tensor visual;               // rows x width
    std::optional<Tensor> text;  // rows x width

    std::size_t total() const {
        return visual.extent(0) + (text ? text->extent(0) : 0);
    }
    Tensor concatenated() const;
    std::vector<std::size_t> visual_positions() const;
};

struct DecodeCache {
    struct Block {
        LayerNormCache ln1;
        Tensor q, k, v;             // S x width, heads fused
        std::vector<Tensor> probs;  // per head, S x S
        LayerNormCache ln2;
        Tensor ffn_pre;             // S x hidden
    };
    std::vector<Block> blocks;
    LayerNormCache final_ln;
};

struct DecodeOutput {
    Tensor outputs;                   // S x width
    std::optional<Tensor> attention;  // heads x S x S, last block, rows = queries
};

//! Full forward pass. With capture_attention the last block's post-softmax
//! probabilities come back per head. A cache enables decode_backward.
DecodeOutput decode(const TokenSequence& seq, const ToyDecoder& model, bool capture_attention,
                    DecodeCache* cache = nullptr);

//! Cotangent of the concatenated input sequence. The model is frozen, so no
//! weight gradients exist.
Tensor decode_backward(const Tensor& d_out, const ToyDecoder& model, const DecodeCache& cache);

//! Column-mean attention signals. scores is the visual restriction used as
//! the supervision target; full_column_means covers every column and sums
//! to 1 for square row-stochastic attention.
struct PseudoSignals {
    Tensor scores;
    Tensor full_column_means;
};

//! Head-averaged column-wise mean of the attention probabilities.
PseudoSignals pseudo_scores(const Tensor& attention,
                            const std::vector<std::size_t>& visual_positions);

//! Frozen teacher bundle: the decoder plus the frozen projection that lifts
//! raw visual tokens to model width on the auxiliary path.
struct Teacher {
    ToyDecoder decoder;
    Tensor aux_projection;  // D x width

    Teacher(const ToyDecoderConfig& cfg, std::size_t token_width, std::uint64_t seed);
    std::uint64_t checksum() const;

    //! Unit token-space direction whose keys draw the strongest first-block
    //! attention response through the frozen projection (top eigenvector of
    //! the pooled query-key response map, by power iteration). Plays the
    //! role of the pretrained encoder's alignment with the backbone.
    Tensor preferred_token_direction() const;
};

//! All-token pass: project every visual token, append text, decode with
//! attention capture, return pseudo scores over the T*N visual columns.
PseudoSignals auxiliary_pass(const predictor::FrameStack& stack,
                             const std::optional<Tensor>& text, const Teacher& teacher);

} // namespace storm::teacher
