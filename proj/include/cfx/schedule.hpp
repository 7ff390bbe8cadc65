// SPDX-License-Identifier: Apache-2.0
#pragma once

// Diffusion constants and the elementary stepping math shared by the
// samplers: linear beta schedule, forward noising, ancestral reverse step,
// and the coupled-sampler coefficients (a_t, b_t).

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cfx/tensor.hpp"

namespace cfx {

struct NoiseSchedule {
    int t_train = 0;
    std::vector<double> betas;       // beta_t, t = 1..T stored at index t-1
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s
    std::vector<double> sigmas;      // posterior std, 0 at t=1
    std::vector<int> inference_steps;  // strictly increasing subsequence of 1..T

    double alpha_bar(int t) const {  // alpha_bar_0 := 1 at the inversion boundary
        if (t == 0) return 1.0;
        return alpha_bars.at(static_cast<size_t>(t - 1));
    }
    double alpha(int t) const { return alphas.at(static_cast<size_t>(t - 1)); }
    double beta(int t) const { return betas.at(static_cast<size_t>(t - 1)); }
    double sigma(int t) const { return sigmas.at(static_cast<size_t>(t - 1)); }
    int num_inference_steps() const { return static_cast<int>(inference_steps.size()); }

    // timestep at inference level k (k = 1..S); level 0 is the clean image
    int level_t(int k) const { return inference_steps.at(static_cast<size_t>(k - 1)); }
    double level_alpha_bar(int k) const { return k == 0 ? 1.0 : alpha_bar(level_t(k)); }
};

inline NoiseSchedule build_schedule(int t_train, double beta_start, double beta_end,
                                    int num_inference_steps) {
    if (t_train <= 0) throw std::invalid_argument("t_train must be positive");
    if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0))
        throw std::invalid_argument("require 0 < beta_start < beta_end < 1");
    if (num_inference_steps <= 0 || num_inference_steps > t_train)
        throw std::invalid_argument("num_inference_steps must be in [1, t_train]");

    NoiseSchedule s;
    s.t_train = t_train;
    s.betas.resize(static_cast<size_t>(t_train));
    s.alphas.resize(static_cast<size_t>(t_train));
    s.alpha_bars.resize(static_cast<size_t>(t_train));
    s.sigmas.resize(static_cast<size_t>(t_train));
    double ab = 1.0;
    for (int t = 1; t <= t_train; ++t) {
        double beta = t_train == 1 ? beta_start
                                   : beta_start + (beta_end - beta_start) * (t - 1) / (t_train - 1);
        double ab_prev = ab;
        ab *= 1.0 - beta;
        size_t i = static_cast<size_t>(t - 1);
        s.betas[i] = beta;
        s.alphas[i] = 1.0 - beta;
        s.alpha_bars[i] = ab;
        // DDPM posterior std; zero at t=1 (no noise on the last reverse step)
        s.sigmas[i] = t == 1 ? 0.0 : std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
    }
    // evenly spaced, ending at t_train
    s.inference_steps.resize(static_cast<size_t>(num_inference_steps));
    for (int k = 1; k <= num_inference_steps; ++k)
        s.inference_steps[static_cast<size_t>(k - 1)] =
            static_cast<int>(std::llround(static_cast<double>(k) * t_train / num_inference_steps));
    for (size_t i = 1; i < s.inference_steps.size(); ++i)
        if (s.inference_steps[i] <= s.inference_steps[i - 1])
            throw std::invalid_argument("inference step spacing produced duplicates");
    return s;
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                        const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.t_train) throw std::out_of_range("t out of range");
    const double ab = schedule.alpha_bar(t);
    const T c0 = static_cast<T>(std::sqrt(ab));
    const T c1 = static_cast<T>(std::sqrt(1.0 - ab));
    Tensor<T> out(x0.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = c0 * x0[i] + c1 * eps[i];
    return out;
}

/// Ancestral DDPM reverse step:
/// x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-alpha_bar_t) eps_pred) / sqrt(alpha_t) + sigma_t noise
template <typename T>
Tensor<T> ddpm_step(const Tensor<T>& x_t, int t, const Tensor<T>& eps_pred,
                    const Tensor<T>& noise, const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.t_train) throw std::out_of_range("t out of range");
    const double alpha = schedule.alpha(t);
    const double ab = schedule.alpha_bar(t);
    const T inv_sqrt_a = static_cast<T>(1.0 / std::sqrt(alpha));
    const T coef = ab < 1.0 ? static_cast<T>((1.0 - alpha) / std::sqrt(1.0 - ab)) : T(0);
    const T sig = static_cast<T>(schedule.sigma(t));
    Tensor<T> out(x_t.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = inv_sqrt_a * (x_t[i] - coef * eps_pred[i]) + sig * noise[i];
    return out;
}

/// Coupled-sampler step coefficients at inference level k (1-based):
///   a = sqrt(ab_prev / ab_cur)
///   b = sqrt(1 - ab_prev) - sqrt(ab_prev (1 - ab_cur) / ab_cur)
struct EdictCoeffs {
    double a = 0, b = 0;
};

inline EdictCoeffs edict_coeffs_levels(double ab_prev, double ab_cur) {
    EdictCoeffs c;
    c.a = std::sqrt(ab_prev / ab_cur);
    c.b = std::sqrt(1.0 - ab_prev) - std::sqrt(ab_prev * (1.0 - ab_cur) / ab_cur);
    return c;
}

/// Coefficients for the step whose noisy side sits at inference level k.
inline EdictCoeffs edict_coeffs(int level, const NoiseSchedule& schedule) {
    if (level < 1 || level > schedule.num_inference_steps())
        throw std::out_of_range("inference level out of range");
    return edict_coeffs_levels(schedule.level_alpha_bar(level - 1),
                               schedule.level_alpha_bar(level));
}

} // namespace cfx
