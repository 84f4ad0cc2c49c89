// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "storm/gradcheck.hpp"
#include "storm/ops.hpp"
#include "storm/rng.hpp"
#include "storm/teacher.hpp"

#include <cmath>
#include <cstring>

using namespace storm;
using namespace storm::teacher;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, RngState& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-scale, scale);
    return t;
}

ToyDecoderConfig small_config() { return {2, 2, 16, 4}; }

} // namespace

TEST_CASE("decode single token yields the trivial attention row") {
    ToyDecoder model(small_config(), 71);
    RngState rng(72);
    TokenSequence seq;
    seq.visual = random_tensor({1, 16}, rng);
    DecodeOutput out = decode(seq, model, true);
    REQUIRE(out.attention.has_value());
    CHECK(out.attention->shape() == std::vector<std::size_t>{2, 1, 1});
    CHECK((*out.attention)[0] == 1.0);
    CHECK((*out.attention)[1] == 1.0);
    CHECK(out.outputs.extent(0) == 1);
}

TEST_CASE("attention rows are stochastic for every head") {
    ToyDecoder model(small_config(), 73);
    RngState rng(74);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t s = 2 + static_cast<std::size_t>(rng.next_uniform() * 9.0);
        TokenSequence seq;
        seq.visual = random_tensor({s, 16}, rng, 2.0);
        DecodeOutput out = decode(seq, model, true);
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t i = 0; i < s; ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < s; ++j) sum += out.attention->at3(h, i, j);
                REQUIRE(std::abs(sum - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("duplicate tokens receive identical attention columns") {
    ToyDecoder model(small_config(), 75);
    RngState rng(76);
    TokenSequence seq;
    seq.visual = random_tensor({6, 16}, rng);
    // token 4 := token 1
    std::copy(seq.visual.data() + 1 * 16, seq.visual.data() + 2 * 16,
              seq.visual.data() + 4 * 16);
    DecodeOutput out = decode(seq, model, true);
    const std::size_t heads = 2, s = 6;
    for (std::size_t i = 0; i < s; ++i) {
        double col1 = 0.0, col4 = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            col1 += out.attention->at3(h, i, 1);
            col4 += out.attention->at3(h, i, 4);
        }
        CHECK(std::abs(col1 - col4) / heads < 1e-9);
    }
}

TEST_CASE("decode validates the model width") {
    ToyDecoder model(small_config(), 77);
    RngState rng(78);
    TokenSequence seq;
    seq.visual = random_tensor({3, 8}, rng);
    CHECK_THROWS_AS(decode(seq, model, false), ConfigError);
}

TEST_CASE("pseudo_scores of uniform attention is 1/S everywhere") {
    const std::size_t heads = 3, s = 5;
    Tensor attn({heads, s, s});
    for (std::size_t i = 0; i < attn.size(); ++i) attn[i] = 1.0 / static_cast<double>(s);
    std::vector<std::size_t> positions{0, 1, 2};
    PseudoSignals sig = pseudo_scores(attn, positions);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        CHECK(sig.scores[i] == doctest::Approx(0.2).epsilon(1e-15));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < s; ++i) total += sig.full_column_means[i];
    CHECK(std::abs(total - 1.0) < 1e-9);

    CHECK_THROWS_AS(pseudo_scores(attn, {9}), std::out_of_range);
}

TEST_CASE("a token attended by every query dominates the column means") {
    const std::size_t heads = 2, s = 6;
    Tensor attn({heads, s, s});
    // every query puts ~all mass on key 3
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < s; ++j) {
                attn.at3(h, i, j) = j == 3 ? 0.95 : 0.01;
            }
        }
    }
    PseudoSignals sig = pseudo_scores(attn, {0, 1, 2, 3, 4, 5});
    CHECK(sig.scores[3] == doctest::Approx(0.95).epsilon(1e-12));
    for (std::size_t j = 0; j < s; ++j) {
        if (j != 3) CHECK(sig.scores[j] == doctest::Approx(0.01).epsilon(1e-12));
    }
}

TEST_CASE("head-average-then-column-mean equals column-mean-then-head-average") {
    RngState rng(79);
    const std::size_t heads = 4, s = 7;
    Tensor attn({heads, s, s});
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor logits = random_tensor({s, s}, rng, 2.0);
        Tensor probs = softmax(logits, 1);
        std::copy(probs.data(), probs.data() + s * s, attn.data() + h * s * s);
    }
    std::vector<std::size_t> all(s);
    for (std::size_t i = 0; i < s; ++i) all[i] = i;
    PseudoSignals sig = pseudo_scores(attn, all);

    // other order: column means per head, then average over heads
    for (std::size_t j = 0; j < s; ++j) {
        double acc = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            double col = 0.0;
            for (std::size_t i = 0; i < s; ++i) col += attn.at3(h, i, j);
            acc += col / static_cast<double>(s);
        }
        acc /= static_cast<double>(heads);
        CHECK(std::abs(acc - sig.full_column_means[j]) < 1e-15);
    }
}

TEST_CASE("auxiliary_pass covers all visual columns at full scale") {
    // paper-shaped token counts, narrow teacher to keep the test quick
    const std::size_t frames = 30, n = 100, d = 24;
    ToyDecoderConfig cfg{2, 4, 32, 2};
    Teacher frozen(cfg, d, 81);
    RngState rng(82);
    predictor::FrameStack stack(random_tensor({frames, n, d}, rng));
    PseudoSignals sig = auxiliary_pass(stack, std::nullopt, frozen);
    CHECK(sig.scores.size() == 3000);
    double total = 0.0;
    for (std::size_t i = 0; i < sig.full_column_means.size(); ++i) {
        CHECK(sig.full_column_means[i] >= 0.0);
        CHECK(sig.full_column_means[i] <= 1.0);
        total += sig.full_column_means[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("auxiliary_pass is deterministic and text extends the column space") {
    ToyDecoderConfig cfg = small_config();
    Teacher frozen(cfg, 8, 83);
    RngState rng(84);
    predictor::FrameStack stack(random_tensor({2, 3, 8}, rng));
    Tensor text = random_tensor({2, 16}, rng);

    PseudoSignals a = auxiliary_pass(stack, text, frozen);
    PseudoSignals b = auxiliary_pass(stack, text, frozen);
    CHECK(std::memcmp(a.scores.data(), b.scores.data(), a.scores.size() * sizeof(double)) == 0);

    CHECK(a.scores.size() == 6);
    CHECK(a.full_column_means.size() == 8);  // 6 visual + 2 text
    double total = 0.0;
    for (std::size_t i = 0; i < 8; ++i) total += a.full_column_means[i];
    CHECK(std::abs(total - 1.0) < 1e-9);

    // without text the full vector shrinks but still sums to 1
    PseudoSignals c = auxiliary_pass(stack, std::nullopt, frozen);
    CHECK(c.full_column_means.size() == 6);
    total = 0.0;
    for (std::size_t i = 0; i < 6; ++i) total += c.full_column_means[i];
    CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("teacher checksum is stable and weight-sensitive") {
    Teacher a(small_config(), 8, 85);
    Teacher b(small_config(), 8, 85);
    Teacher c(small_config(), 8, 86);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());

    const std::uint64_t before = a.checksum();
    RngState rng(87);
    predictor::FrameStack stack(random_tensor({2, 3, 8}, rng));
    for (int i = 0; i < 5; ++i) auxiliary_pass(stack, std::nullopt, a);
    CHECK(a.checksum() == before);
}

TEST_CASE("decode_backward matches finite differences on the input") {
    ToyDecoderConfig cfg{1, 2, 8, 2};
    ToyDecoder model(cfg, 88);
    RngState rng(89);
    TokenSequence seq;
    seq.visual = random_tensor({4, 8}, rng);
    Tensor w = random_tensor({4, 8}, rng);

    DecodeCache cache;
    decode(seq, model, false, &cache);
    Tensor analytic = decode_backward(w, model, cache);

    const GradCheckResult r = grad_check(
        [&](const Tensor& probe) {
            TokenSequence s2;
            s2.visual = probe;
            Tensor out = decode(s2, model, false).outputs;
            double acc = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * w[i];
            return acc;
        },
        seq.visual, analytic, 1e-5);
    CHECK(r.max_rel_err < 1e-6);
}
