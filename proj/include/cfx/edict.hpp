// SPDX-License-Identifier: Apache-2.0
#pragma once

// Coupled two-stream exactly-invertible sampler. A state holds the (x, y)
// latent pair and its inference level: level 0 is the clean image, level k
// sits at timestep inference_steps[k-1]. Each step is algebraically
// invertible for any p in (0,1); nothing inside the loop is clamped.

#include "cfx/guidance.hpp"
#include "cfx/schedule.hpp"

namespace cfx {

template <typename T>
struct EdictState {
    Tensor<T> x, y;
    int step_index = 0;  // inference level
};

struct EdictConfig {
    double p = 0.93;
    int tau = 25;  // inversion depth in inference steps
    GuidanceConfig guidance;
};

/// One denoise step: level k -> k-1 (update x_inter, then y_inter, then mix).
template <typename T>
EdictState<T> edict_denoise_step(const EdictState<T>& state, const Denoiser<T>& denoiser,
                                 const CondSeq<T>& cond_pos, const CondSeq<T>& cond_neg,
                                 const CondSeq<T>& cond_null, const EdictConfig& cfg,
                                 const NoiseSchedule& schedule, EvalCounter* counter = nullptr) {
    const int k = state.step_index;
    if (k <= 0) throw std::out_of_range("edict_denoise_step below level 0");
    const EdictCoeffs c = edict_coeffs(k, schedule);
    const int t = schedule.level_t(k);
    const T a = static_cast<T>(c.a), b = static_cast<T>(c.b);
    const T p = static_cast<T>(cfg.p), q = static_cast<T>(1.0 - cfg.p);

    Tensor<T> eps_y =
        guided_score(denoiser, state.y, t, cond_pos, cond_neg, cond_null, cfg.guidance, counter);
    Tensor<T> x_inter(state.x.shape);
    for (int64_t i = 0; i < x_inter.numel(); ++i) x_inter[i] = a * state.x[i] + b * eps_y[i];

    Tensor<T> eps_xi =
        guided_score(denoiser, x_inter, t, cond_pos, cond_neg, cond_null, cfg.guidance, counter);
    Tensor<T> y_inter(state.y.shape);
    for (int64_t i = 0; i < y_inter.numel(); ++i) y_inter[i] = a * state.y[i] + b * eps_xi[i];

    EdictState<T> out;
    out.x = Tensor<T>(state.x.shape);
    out.y = Tensor<T>(state.y.shape);
    for (int64_t i = 0; i < out.x.numel(); ++i) out.x[i] = p * x_inter[i] + q * y_inter[i];
    for (int64_t i = 0; i < out.y.numel(); ++i) out.y[i] = p * y_inter[i] + q * out.x[i];
    out.step_index = k - 1;
    return out;
}

/// One inversion step: level k -> k+1; the exact inverse of the denoise step.
template <typename T>
EdictState<T> edict_invert_step(const EdictState<T>& state, const Denoiser<T>& denoiser,
                                const CondSeq<T>& cond_pos, const CondSeq<T>& cond_neg,
                                const CondSeq<T>& cond_null, const EdictConfig& cfg,
                                const NoiseSchedule& schedule, EvalCounter* counter = nullptr) {
    const int k = state.step_index;
    if (k >= schedule.num_inference_steps())
        throw std::out_of_range("edict_invert_step above the last level");
    const EdictCoeffs c = edict_coeffs(k + 1, schedule);
    const int t = schedule.level_t(k + 1);
    const T a = static_cast<T>(c.a), b = static_cast<T>(c.b);
    const T p = static_cast<T>(cfg.p), q = static_cast<T>(1.0 - cfg.p);

    Tensor<T> y_inter(state.y.shape);
    for (int64_t i = 0; i < y_inter.numel(); ++i) y_inter[i] = (state.y[i] - q * state.x[i]) / p;
    Tensor<T> x_inter(state.x.shape);
    for (int64_t i = 0; i < x_inter.numel(); ++i) x_inter[i] = (state.x[i] - q * y_inter[i]) / p;

    Tensor<T> eps_xi =
        guided_score(denoiser, x_inter, t, cond_pos, cond_neg, cond_null, cfg.guidance, counter);
    EdictState<T> out;
    out.y = Tensor<T>(state.y.shape);
    for (int64_t i = 0; i < out.y.numel(); ++i) out.y[i] = (y_inter[i] - b * eps_xi[i]) / a;

    Tensor<T> eps_yn =
        guided_score(denoiser, out.y, t, cond_pos, cond_neg, cond_null, cfg.guidance, counter);
    out.x = Tensor<T>(state.x.shape);
    for (int64_t i = 0; i < out.x.numel(); ++i) out.x[i] = (x_inter[i] - b * eps_yn[i]) / a;
    out.step_index = k + 1;
    return out;
}

/// Initialize x = y = x0 and apply tau inversion steps.
template <typename T>
EdictState<T> invert(const Tensor<T>& x0, const Denoiser<T>& denoiser, const CondSeq<T>& cond_pos,
                     const CondSeq<T>& cond_neg, const CondSeq<T>& cond_null,
                     const EdictConfig& cfg, const NoiseSchedule& schedule,
                     EvalCounter* counter = nullptr) {
    if (cfg.tau < 0 || cfg.tau > schedule.num_inference_steps())
        throw std::invalid_argument("tau out of range");
    EdictState<T> state{x0, x0, 0};
    for (int i = 0; i < cfg.tau; ++i)
        state = edict_invert_step(state, denoiser, cond_pos, cond_neg, cond_null, cfg, schedule,
                                  counter);
    return state;
}

/// Denoise back to level 0; the x stream is the emitted image (clamped only
/// here, at the final emit).
template <typename T>
Tensor<T> denoise(EdictState<T> state, const Denoiser<T>& denoiser, const CondSeq<T>& cond_pos,
                  const CondSeq<T>& cond_neg, const CondSeq<T>& cond_null, const EdictConfig& cfg,
                  const NoiseSchedule& schedule, EvalCounter* counter = nullptr,
                  bool clamp_output = true) {
    while (state.step_index > 0)
        state = edict_denoise_step(state, denoiser, cond_pos, cond_neg, cond_null, cfg, schedule,
                                   counter);
    Tensor<T> out = state.x;
    if (clamp_output) clamp_inplace(out, T(-1), T(1));
    return out;
}

} // namespace cfx
