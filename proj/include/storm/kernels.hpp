// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace storm {

//! Serial runs everything on the calling thread; Parallel maps independent
//! output rows across OpenMP threads. Both produce bit-identical results:
//! every output element is accumulated by exactly one thread in the same
//! order, so the choice is purely a speed knob.
enum class ExecMode { Serial, Parallel };

ExecMode exec_mode();
void set_exec_mode(ExecMode mode);
int exec_threads();

// Raw GEMM kernels, row-major, c must not alias a/b. All variants accumulate
// over the inner index in ascending order.

//! Reference kernel: c[m x n] = a[m x k] * b[k x n], plain ikj loops.
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

//! OpenMP kernel with p/j tiling; bit-identical to matmul_serial.
void matmul_parallel(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n);

//! c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);

//! c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);

//! Runs fn(i) for i in [0, count), across threads in Parallel mode. fn must
//! write only to slots owned by index i.
template <typename Fn>
void for_each_index(std::size_t count, Fn&& fn);

namespace detail {
bool parallel_enabled();
}

} // namespace storm

// Implementation of the header-only helper.
#include <omp.h>

namespace storm {

template <typename Fn>
void for_each_index(std::size_t count, Fn&& fn) {
    if (detail::parallel_enabled() && count > 1) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(count); ++i) {
            fn(static_cast<std::size_t>(i));
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) fn(i);
    }
}

} // namespace storm
