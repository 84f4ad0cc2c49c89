// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "storm/gradcheck.hpp"
#include "storm/tensor.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace storm::checks {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

//! Runs one named finite-difference check; fails when the error exceeds the
//! tolerance.
CheckResult check_gradient(const std::string& name,
                           const std::function<double(const Tensor&)>& f, const Tensor& x,
                           const Tensor& analytic, double h, double tolerance,
                           const std::function<bool(std::size_t)>& skip = {});

// Per-scope suites. Tolerances are fixed: primitives 1e-6, predictor and
// ACM modules 1e-5, end-to-end 1e-4.
std::vector<CheckResult> run_numerics_checks();
std::vector<CheckResult> run_predictor_checks();
std::vector<CheckResult> run_acm_checks();
std::vector<CheckResult> run_e2e_checks();

//! scope: numerics | predictor | acm | e2e | all.
std::vector<CheckResult> run_scope(const std::string& scope);

bool all_pass(const std::vector<CheckResult>& results);
void print_results(std::ostream& os, const std::vector<CheckResult>& results);

} // namespace storm::checks
