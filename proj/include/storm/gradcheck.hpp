// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/tensor.hpp"

#include <functional>

namespace storm {

//! Outcome of one finite-difference sweep.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

//! Central differences (f(x+h e_i) - f(x-h e_i)) / 2h against the supplied
//! analytic gradient, scored as |a - n| / max(1, |a|, |n|). `skip` drops
//! indices near known kinks (e.g. |pred - target| < 1e-8 for the l1 loss).
GradCheckResult grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                           const Tensor& analytic, double h,
                           const std::function<bool(std::size_t)>& skip = {});

} // namespace storm
