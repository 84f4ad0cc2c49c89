// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/kernels.hpp"

#include <algorithm>
#include <omp.h>

namespace storm {

namespace {
ExecMode g_mode = ExecMode::Parallel;

constexpr std::size_t kTileP = 128;
constexpr std::size_t kTileJ = 256;
} // namespace

ExecMode exec_mode() { return g_mode; }
void set_exec_mode(ExecMode mode) { g_mode = mode; }
int exec_threads() { return g_mode == ExecMode::Parallel ? omp_get_max_threads() : 1; }

namespace detail {
bool parallel_enabled() { return g_mode == ExecMode::Parallel; }
} // namespace detail

void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_parallel(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    // Tiles over p and j keep a kTileP x kTileJ panel of b hot while all
    // rows sweep it. Ascending p order inside and across tiles matches the
    // serial kernel accumulation order exactly.
    for (std::size_t pp = 0; pp < k; pp += kTileP) {
        const std::size_t p_end = std::min(pp + kTileP, k);
        for (std::size_t jj = 0; jj < n; jj += kTileJ) {
            const std::size_t j_end = std::min(jj + kTileJ, n);
#pragma omp parallel for schedule(static)
            for (long long i = 0; i < static_cast<long long>(m); ++i) {
                const double* ai = a + static_cast<std::size_t>(i) * k;
                double* ci = c + static_cast<std::size_t>(i) * n;
                for (std::size_t p = pp; p < p_end; ++p) {
                    const double aip = ai[p];
                    const double* bp = b + p * n;
                    for (std::size_t j = jj; j < j_end; ++j) ci[j] += aip * bp[j];
                }
            }
        }
    }
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] = acc;
        }
    }
}

void matmul_nt_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
}

void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double api = a[p * m + i];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

void matmul_tn_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, 0.0);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(m); ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double api = a[p * m + static_cast<std::size_t>(i)];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

} // namespace storm
