// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace storm {

//! Counter-based pseudo-random stream. The n-th sample is a pure function of
//! (seed, n), so streams replay identically on every platform and can be
//! forked without sharing state.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    RngState() = default;
    explicit RngState(std::uint64_t s) : seed(s) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() {
        ++counter;
        return mix(seed + 0x9E3779B97F4A7C15ull * counter);
    }

    //! Uniform in the open interval (0, 1); never returns an endpoint.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    //! Standard Gumbel(0, 1) sample.
    double next_gumbel() { return -std::log(-std::log(next_uniform())); }

    //! Independent child stream; forks with distinct ids never collide.
    RngState fork(std::uint64_t stream_id) const {
        return RngState(mix(seed ^ (0xD1B54A32D192ED03ull * (stream_id + 1))));
    }
};

} // namespace storm
