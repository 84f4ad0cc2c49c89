// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

// Wall-clock comparison of the serial reference kernels against the OpenMP
// ones, on the shapes the pipeline actually runs. The two paths are required
// to agree bit-for-bit; this target shows what the parallel path buys.

#include "storm/kernels.hpp"
#include "storm/ops.hpp"
#include "storm/predictor.hpp"
#include "storm/rng.hpp"
#include "storm/teacher.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <omp.h>

using namespace storm;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

Tensor random_tensor(std::vector<std::size_t> shape, RngState& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-1.0, 1.0);
    return t;
}

void report(const char* name, double serial_s, double parallel_s, bool identical) {
    std::printf("%-34s serial %9.4f s   openmp %9.4f s   speedup %5.2fx   %s\n", name,
                serial_s, parallel_s, serial_s / parallel_s,
                identical ? "bit-identical" : "MISMATCH");
}

} // namespace

int main() {
    std::printf("threads available: %d\n\n", omp_get_max_threads());
    RngState rng(99);

    {
        const std::size_t m = 768, k = 768, n = 768;
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor c_serial({m, n}), c_parallel({m, n});
        const double ts = time_of(
            [&] { matmul_serial(a.data(), b.data(), c_serial.data(), m, k, n); }, 3);
        const double tp = time_of(
            [&] { matmul_parallel(a.data(), b.data(), c_parallel.data(), m, k, n); }, 3);
        const bool same = std::memcmp(c_serial.data(), c_parallel.data(),
                                      m * n * sizeof(double)) == 0;
        report("matmul 768x768x768", ts, tp, same);
    }
    {
        // sliding-window token mixing at the full-scale dims
        const std::size_t frames = 30, n = 100, d = 256;
        const predictor::WindowSpec spec{1, 2};
        RngState init(3);
        predictor::PredictorParams params = predictor::PredictorParams::init(
            frames, n, d, spec, 1, predictor::MixerMode::SlidingWindow, init);
        predictor::FrameStack stack(random_tensor({frames, n, d}, rng));
        Tensor z = layer_norm(stack.flattened());
        Tensor out_serial, out_parallel;
        auto mix_all = [&] {
            Tensor h = z;
            for (std::size_t tau = 1; tau <= frames; ++tau) {
                Tensor h_tau =
                    token_mix(z, tau, frames, spec, params.blocks[0].w1, params.blocks[0].w2);
                std::memcpy(h.data() + (tau - 1) * n * d, h_tau.data(),
                            n * d * sizeof(double));
            }
            return h;
        };
        set_exec_mode(ExecMode::Serial);
        const double ts = time_of([&] { out_serial = mix_all(); }, 2);
        set_exec_mode(ExecMode::Parallel);
        const double tp = time_of([&] { out_parallel = mix_all(); }, 2);
        const bool same = std::memcmp(out_serial.data(), out_parallel.data(),
                                      out_serial.size() * sizeof(double)) == 0;
        report("token mixing T=30 N=100 D=256", ts, tp, same);
    }
    {
        // toy-decoder forward at the reduced and full token budgets
        teacher::ToyDecoderConfig cfg;
        teacher::ToyDecoder model(cfg, 5);
        teacher::TokenSequence seq;
        seq.visual = random_tensor({3000, cfg.width}, rng);
        Tensor out_serial, out_parallel;
        set_exec_mode(ExecMode::Serial);
        const double ts = time_of([&] { out_serial = decode(seq, model, false).outputs; }, 1);
        set_exec_mode(ExecMode::Parallel);
        const double tp = time_of([&] { out_parallel = decode(seq, model, false).outputs; }, 1);
        const bool same = std::memcmp(out_serial.data(), out_parallel.data(),
                                      out_serial.size() * sizeof(double)) == 0;
        report("decoder forward S=3000", ts, tp, same);
    }
    set_exec_mode(ExecMode::Parallel);
    return 0;
}
