// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "cfx/schedule.hpp"

using namespace cfx;

namespace {
// hand-built one-step schedule with a chosen alpha_bar
NoiseSchedule single_step(double alpha_bar) {
    NoiseSchedule s;
    s.t_train = 1;
    s.betas = {1.0 - alpha_bar};
    s.alphas = {alpha_bar};
    s.alpha_bars = {alpha_bar};
    s.sigmas = {0.0};
    s.inference_steps = {1};
    return s;
}
} // namespace

TEST_CASE("build_schedule validates parameters") {
    REQUIRE_THROWS_AS(build_schedule(0, 1e-4, 0.02, 1), std::invalid_argument);
    // constant beta via beta_start == beta_end is disallowed
    REQUIRE_THROWS_AS(build_schedule(10, 0.01, 0.01, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(build_schedule(10, 0.02, 1e-4, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(build_schedule(10, 1e-4, 1.5, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(build_schedule(10, 1e-4, 0.02, 11), std::invalid_argument);
}

TEST_CASE("schedule base cases and monotonicity") {
    NoiseSchedule s = build_schedule(1000, 1e-4, 0.02, 50);
    // empty-product base case
    REQUIRE(s.alpha_bars[0] == Catch::Approx(1.0 - s.betas[0]));
    REQUIRE(s.alpha_bar(0) == 1.0);
    for (int t = 2; t <= s.t_train; ++t) REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
    REQUIRE(s.inference_steps.back() == 1000);
    REQUIRE(s.num_inference_steps() == 50);
    REQUIRE(s.sigma(1) == 0.0);
    for (int k = 1; k <= 50; ++k) REQUIRE(edict_coeffs(k, s).a > 0.0);
}

TEST_CASE("forward_noise substitution cases") {
    Rng rng(3);
    auto x0 = randn<double>({1, 4, 4}, rng);
    auto eps = randn<double>({1, 4, 4}, rng);

    SECTION("alpha_bar = 0.25") {
        auto out = forward_noise(x0, 1, eps, single_step(0.25));
        for (int64_t i = 0; i < out.numel(); ++i)
            REQUIRE(out[i] == Catch::Approx(0.5 * x0[i] + std::sqrt(0.75) * eps[i]));
    }
    SECTION("alpha_bar = 1 is noiseless") {
        auto out = forward_noise(x0, 1, eps, single_step(1.0));
        REQUIRE(max_abs_diff(out, x0) == 0.0);
    }
    SECTION("alpha_bar = 1e-6 is all noise") {
        clamp_inplace(x0, -1.0, 1.0);
        auto out = forward_noise(x0, 1, eps, single_step(1e-6));
        // sqrt(1e-6) * |x0| with |x0| <= 1 leaves residue just above 1e-3
        REQUIRE(max_abs_diff(out, eps) <= 1.2e-3);
    }
    SECTION("t out of range") {
        REQUIRE_THROWS_AS(forward_noise(x0, 2, eps, single_step(0.5)), std::out_of_range);
    }
}

TEST_CASE("ddpm_step degenerate cases") {
    Rng rng(4);
    auto x = randn<double>({1, 4, 4}, rng);
    auto eps = randn<double>({1, 4, 4}, rng);
    Tensor<double> zero(x.shape);

    SECTION("alpha = 1, sigma = 0 leaves x unchanged") {
        auto out = ddpm_step(x, 1, eps, zero, single_step(1.0));
        REQUIRE(max_abs_diff(out, x) == 0.0);
    }
    SECTION("sigma = 0, eps_pred = 0 rescales by 1/sqrt(alpha)") {
        auto s = single_step(0.81);
        auto out = ddpm_step(x, 1, zero, zero, s);
        for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == Catch::Approx(x[i] / 0.9));
    }
}

TEST_CASE("single-step forward then deterministic reverse reproduces x0") {
    Rng rng(5);
    auto s = single_step(0.4);
    SECTION("float64") {
        auto x0 = randn<double>({1, 8, 8}, rng);
        auto eps = randn<double>({1, 8, 8}, rng);
        Tensor<double> zero(x0.shape);
        auto x1 = forward_noise(x0, 1, eps, s);
        auto back = ddpm_step(x1, 1, eps, zero, s);
        REQUIRE(max_abs_diff(back, x0) <= 1e-5);
    }
    SECTION("float32") {
        auto x0 = randn<float>({1, 8, 8}, rng);
        auto eps = randn<float>({1, 8, 8}, rng);
        Tensor<float> zero(x0.shape);
        auto x1 = forward_noise(x0, 1, eps, s);
        auto back = ddpm_step(x1, 1, eps, zero, s);
        REQUIRE(max_abs_diff(back, x0) <= 1e-3f);
    }
}

TEST_CASE("coupled-sampler coefficients") {
    SECTION("equal alpha_bars collapse to identity") {
        auto c = edict_coeffs_levels(0.37, 0.37);
        REQUIRE(c.a == Catch::Approx(1.0));
        REQUIRE(c.b == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("hand-checked pair 0.5 / 0.25") {
        auto c = edict_coeffs_levels(0.5, 0.25);
        REQUIRE(c.a == Catch::Approx(std::sqrt(2.0)));
        REQUIRE(c.b == Catch::Approx(std::sqrt(0.5) - std::sqrt(1.5)));
    }
    SECTION("boundary alpha_bar_prev = 1") {
        const double ab = 0.3;
        auto c = edict_coeffs_levels(1.0, ab);
        REQUIRE(c.a == Catch::Approx(1.0 / std::sqrt(ab)));
        REQUIRE(c.b == Catch::Approx(-std::sqrt((1.0 - ab) / ab)));
    }
    SECTION("level bounds checked") {
        NoiseSchedule s = build_schedule(100, 1e-4, 0.02, 10);
        REQUIRE_THROWS_AS(edict_coeffs(0, s), std::out_of_range);
        REQUIRE_THROWS_AS(edict_coeffs(11, s), std::out_of_range);
    }
}
