// Copyright (c) 2026 the storm-reduce authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "storm/flops.hpp"

#include <json.hpp>

#include <numeric>
#include <sstream>

using namespace storm;
using namespace storm::flops;

TEST_CASE("closed-form ratio at the production config is exactly 20/3") {
    const MixerConfig cfg{30, 100, 256, 1, 2};
    const std::uint64_t existing = closed_form(cfg, MixingVariant::Existing);
    const std::uint64_t proposed = closed_form(cfg, MixingVariant::Proposed);
    CHECK(existing == 256ull * 3000 * 3000);
    CHECK(proposed == 256ull * 9 * 15 * 100 * 100);
    // exact rational identity, no floating point involved
    CHECK(3 * existing == 20 * proposed);
    const std::uint64_t g = std::gcd(existing, proposed);
    CHECK(existing / g == 20);
    CHECK(proposed / g == 3);
}

TEST_CASE("doubling N quadruples both dominant terms") {
    MixerConfig small{30, 50, 256, 1, 2};
    MixerConfig big{30, 100, 256, 1, 2};
    for (auto variant : {MixingVariant::Existing, MixingVariant::Proposed}) {
        CHECK(closed_form(big, variant) == 4 * closed_form(small, variant));
    }
}

TEST_CASE("degenerate full-window config flags no benefit") {
    // window spans the whole sequence: 2l+1 = T with kappa = 1
    MixerConfig cfg{5, 8, 4, 2, 1};
    const std::uint64_t existing = closed_form(cfg, MixingVariant::Existing);
    const std::uint64_t proposed = closed_form(cfg, MixingVariant::Proposed);
    CHECK(proposed >= existing);

    const FlopsReport report = build_report(cfg, 40, 10, {1, 2, 8, 2});
    CHECK(report.no_benefit);

    MixerConfig good{30, 16, 8, 1, 2};
    const FlopsReport ok = build_report(good, 480, 60, {1, 2, 8, 2});
    CHECK_FALSE(ok.no_benefit);
}

TEST_CASE("empirical census sits a fixed small factor above the closed form") {
    // strided proposed mode: the factor is exactly 16/3 scalar ops per
    // dominant multiply-add term at radius 1
    for (std::size_t n : {6, 10, 16}) {
        MixerConfig cfg{6, n, 4, 1, 2};
        const std::uint64_t census =
            empirical_count(cfg, MixingVariant::Proposed, /*strided=*/true);
        const std::uint64_t closed = closed_form(cfg, MixingVariant::Proposed);
        CHECK(3 * census == 16 * closed);
        const double factor = static_cast<double>(census) / static_cast<double>(closed);
        CHECK(factor >= 1.0);
        CHECK(factor <= 8.0);
    }
    // the existing variant carries a factor of exactly 8
    MixerConfig cfg{4, 8, 4, 1, 1};
    const std::uint64_t census = empirical_count(cfg, MixingVariant::Existing, false);
    CHECK(census == 8 * closed_form(cfg, MixingVariant::Existing));

    // window-size scaling: at radius 2 the factor is 4 + 4/5 = 24/5, so the
    // census tracks the (2l+1)^2 dominant term exactly
    MixerConfig wide{6, 8, 4, 2, 2};
    const std::uint64_t census_wide = empirical_count(wide, MixingVariant::Proposed, true);
    CHECK(5 * census_wide == 24 * closed_form(wide, MixingVariant::Proposed));
}

TEST_CASE("existing-variant census grows 4x when T doubles") {
    MixerConfig base{4, 8, 4, 1, 1};
    MixerConfig doubled{8, 8, 4, 1, 1};
    const std::uint64_t c1 = empirical_count(base, MixingVariant::Existing, false);
    const std::uint64_t c2 = empirical_count(doubled, MixingVariant::Existing, false);
    CHECK(c2 == 4 * c1);
}

TEST_CASE("census is identical across repeated runs") {
    MixerConfig cfg{6, 10, 8, 1, 2};
    for (auto variant : {MixingVariant::Existing, MixingVariant::Proposed}) {
        const std::uint64_t a = empirical_count(cfg, variant, true);
        const std::uint64_t b = empirical_count(cfg, variant, true);
        CHECK(a == b);
    }
}

TEST_CASE("strided mode counts fewer frames than dense mode") {
    MixerConfig cfg{8, 10, 8, 1, 2};
    const std::uint64_t dense = empirical_count(cfg, MixingVariant::Proposed, false);
    const std::uint64_t strided = empirical_count(cfg, MixingVariant::Proposed, true);
    CHECK(strided < dense);
    CHECK(dense == 2 * strided);  // kappa = 2, T even
}

TEST_CASE("decoder audit ratio, bounds, and monotonicity") {
    const teacher::ToyDecoderConfig tiny{2, 2, 32, 2};
    const DecoderAudit equal = headline_ratio(50, 50, tiny);
    CHECK(equal.ratio == 1.0);

    const DecoderAudit audit = headline_ratio(300, 12, tiny);
    CHECK(audit.census_reduced < audit.census_all);
    CHECK(audit.linear_bound == doctest::Approx(25.0));
    CHECK(audit.quadratic_bound == doctest::Approx(625.0));
    CHECK(audit.ratio > audit.linear_bound);
    CHECK(audit.ratio < audit.quadratic_bound);

    // monotone in the all-token count at a fixed reduced count
    std::uint64_t prev = 0;
    for (std::size_t all : {60, 120, 240, 480}) {
        const DecoderAudit a = headline_ratio(all, 12, tiny);
        CHECK(a.census_all > prev);
        prev = a.census_all;
    }
    CHECK_THROWS_AS(headline_ratio(0, 10, tiny), ConfigError);
}

TEST_CASE("report JSON carries conventions and all count fields") {
    MixerConfig cfg{6, 10, 8, 1, 2};
    const FlopsReport report = build_report(cfg, 60, 12, {1, 2, 8, 2});
    std::ostringstream os;
    write_report_json(os, report);
    const auto j = nlohmann::json::parse(os.str());
    CHECK(j.at("conventions").get<std::string>().find("multiply-add") != std::string::npos);
    CHECK(j.at("closed_form").at("existing").get<std::uint64_t>() ==
          report.closed_form_existing);
    CHECK(j.at("empirical").at("proposed_scalar_ops").get<std::uint64_t>() ==
          report.empirical_proposed);
    CHECK(j.at("empirical").at("proposed_madd_pairs").get<std::uint64_t>() ==
          report.empirical_proposed / 2);
    CHECK(j.at("ratios").at("closed_form").get<double>() == report.ratio_closed_form);
    CHECK(j.at("decoder_audit").at("linear_bound").get<double>() == doctest::Approx(5.0));
    CHECK(j.at("decoder_audit").at("quadratic_bound").get<double>() == doctest::Approx(25.0));
}
