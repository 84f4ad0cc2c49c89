// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include "storm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace storm {

GradCheckResult grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                           const Tensor& analytic, double h,
                           const std::function<bool(std::size_t)>& skip) {
    if (!analytic.same_shape(x)) {
        throw ShapeError("grad_check: analytic gradient " + analytic.shape_str() +
                         " does not match input " + x.shape_str());
    }
    GradCheckResult result;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (skip && skip(i)) continue;
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) /
                           std::max({1.0, std::abs(a), std::abs(numeric)});
        if (rel > result.max_rel_err) {
            result.max_rel_err = rel;
            result.worst_index = i;
            result.analytic_at_worst = a;
            result.numeric_at_worst = numeric;
        }
        ++result.checked;
    }
    return result;
}

} // namespace storm
