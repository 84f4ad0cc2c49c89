// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace storm {

//! Multiply-add census for one instrumented run. `scalar_ops` counts scalar
//! multiplies and adds separately, so one m x k x n matmul contributes
//! exactly 2*m*k*n.
struct OpCounter {
    std::uint64_t scalar_ops = 0;
    std::uint64_t matmul_calls = 0;

    void record_matmul(std::size_t m, std::size_t k, std::size_t n) {
        scalar_ops += 2ull * m * k * n;
        ++matmul_calls;
    }
    void reset() {
        scalar_ops = 0;
        matmul_calls = 0;
    }
};

//! Counter active on the current thread, or nullptr when counting is off.
//! One run context per thread; never shared across threads.
OpCounter* active_op_counter();

//! RAII scope that makes `counter` the active census on this thread.
class CountScope {
public:
    explicit CountScope(OpCounter& counter);
    ~CountScope();
    CountScope(const CountScope&) = delete;
    CountScope& operator=(const CountScope&) = delete;

private:
    OpCounter* previous_;
};

} // namespace storm
