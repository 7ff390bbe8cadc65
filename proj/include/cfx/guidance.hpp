// SPDX-License-Identifier: Apache-2.0
#pragma once

// Guidance-score algebra. Two combiners share one linear form
// (1+w)*primary - w*secondary: classifier-free guidance pairs the
// conditional score with the unconditional one, negative guidance pairs the
// positive-drift conditioning with the negative-drift one.

#include <atomic>
#include <stdexcept>

#include "cfx/denoiser.hpp"
#include "cfx/embedding.hpp"

namespace cfx {

enum class GuidanceMode { Cfg, Negative };

struct GuidanceConfig {
    GuidanceMode mode = GuidanceMode::Negative;
    double w = 0.0;
};

inline GuidanceMode guidance_mode_from_string(const std::string& s) {
    if (s == "cfg") return GuidanceMode::Cfg;
    if (s == "ng" || s == "negative") return GuidanceMode::Negative;
    throw std::invalid_argument("unknown guidance mode: " + s);
}

inline std::string to_string(GuidanceMode m) {
    return m == GuidanceMode::Cfg ? "cfg" : "ng";
}

struct EvalCounter {
    std::atomic<int64_t> denoiser_calls{0};
    std::atomic<int64_t> classifier_queries{0};
};

namespace detail {
template <typename T>
Tensor<T> combine(const Tensor<T>& primary, const Tensor<T>& secondary, double w) {
    if (primary.shape != secondary.shape)
        throw std::invalid_argument("guidance combine: shape mismatch");
    const T a = static_cast<T>(1.0 + w), b = static_cast<T>(w);
    Tensor<T> out(primary.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * primary[i] - b * secondary[i];
    return out;
}
} // namespace detail

/// (1+w) eps_cond - w eps_uncond
template <typename T>
Tensor<T> cfg_combine(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double w) {
    return detail::combine(eps_cond, eps_uncond, w);
}

/// (1+w) eps_target - w eps_source
template <typename T>
Tensor<T> negative_combine(const Tensor<T>& eps_target, const Tensor<T>& eps_source, double w) {
    return detail::combine(eps_target, eps_source, w);
}

/// Guided score; always exactly two denoiser evaluations. In Cfg mode the
/// secondary branch is the empty conditioning and cond_neg is ignored.
template <typename T>
Tensor<T> guided_score(const Denoiser<T>& denoiser, const Tensor<T>& x_t, int t,
                       const CondSeq<T>& cond_pos, const CondSeq<T>& cond_neg,
                       const CondSeq<T>& cond_null, const GuidanceConfig& cfg,
                       EvalCounter* counter = nullptr) {
    Tensor<T> eps_pos = predict_noise(denoiser, x_t, t, cond_pos);
    const CondSeq<T>& secondary = cfg.mode == GuidanceMode::Cfg ? cond_null : cond_neg;
    Tensor<T> eps_sec = predict_noise(denoiser, x_t, t, secondary);
    if (counter) counter->denoiser_calls += 2;
    return detail::combine(eps_pos, eps_sec, cfg.w);
}

} // namespace cfx
