// SPDX-License-Identifier: Apache-2.0
#pragma once

// Counterfactual generation loop: invert under the source prompt with the
// target prompt as negative drift, denoise with the prompts swapped, verify
// with one classifier query, and escalate (tau, w) on failure.

#include <optional>

#include "cfx/classifier.hpp"
#include "cfx/distill.hpp"
#include "cfx/edict.hpp"

namespace cfx {

struct EscalationSchedule {
    std::vector<std::pair<int, double>> tuples;  // (tau, w), tried in order

    void validate(const NoiseSchedule& schedule) const {
        if (tuples.empty()) throw std::invalid_argument("escalation schedule is empty");
        for (const auto& [tau, w] : tuples)
            if (tau < 1 || tau > schedule.num_inference_steps() || w < 0)
                throw std::invalid_argument("invalid escalation tuple");
    }
};

struct AttemptRecord {
    int tau = 0;
    double w = 0;
    bool flipped = false;
    uint64_t output_hash = 0;
};

struct CounterfactualResult {
    Tensor<float> original;
    Tensor<float> explanation;  // last attempt's output, kept even on failure
    int source_class = 0;
    int target_class = 0;
    bool flipped = false;
    std::optional<std::pair<int, double>> used_tuple;
    std::vector<AttemptRecord> attempts;
    int64_t classifier_queries = 0;
    int64_t denoiser_calls = 0;
};

struct PromptSet {
    CondSeq<float> class_cond[2];
    CondSeq<float> null;
};

/// Prompts for both classes plus the empty conditioning. `use_context`
/// controls the context-token ablation; n_class_tokens must match the
/// distilled table.
inline PromptSet build_prompts(const EmbeddingTable& table, int n_context_tokens,
                               int n_class_tokens, bool use_context = true) {
    PromptSet ps;
    const int ctx = use_context ? n_context_tokens : 0;
    for (int c = 0; c < 2; ++c)
        ps.class_cond[c] =
            render_prompt<float>(PromptTemplate::class_prompt(ctx, c, n_class_tokens), table);
    ps.null = null_cond<float>(table);
    return ps;
}

inline CounterfactualResult generate_counterfactual(
    const Tensor<float>& x, int target, const BlackBoxClassifier& classifier,
    const PromptSet& prompts, const Denoiser<float>& denoiser, const NoiseSchedule& schedule,
    const EscalationSchedule& esc, double edict_p, GuidanceMode mode,
    EvalCounter* counter = nullptr) {
    esc.validate(schedule);
    EvalCounter local;
    EvalCounter& cnt = counter ? *counter : local;
    const int64_t base_den = cnt.denoiser_calls;
    const int64_t base_clf = cnt.classifier_queries;
    CountingClassifier clf(classifier, cnt);

    CounterfactualResult res;
    res.original = x;
    res.target_class = target;
    res.source_class = clf.predict(x).label;
    if (res.source_class == target)
        throw std::invalid_argument("input is already predicted as the target class");
    const CondSeq<float>& c_src = prompts.class_cond[res.source_class];
    const CondSeq<float>& c_tgt = prompts.class_cond[target];

    for (const auto& [tau, w] : esc.tuples) {
        EdictConfig cfg;
        cfg.p = edict_p;
        cfg.tau = tau;
        cfg.guidance = GuidanceConfig{mode, w};
        // invert: positive drift = source prompt, negative = target prompt
        EdictState<float> state =
            invert(x, denoiser, c_src, c_tgt, prompts.null, cfg, schedule, &cnt);
        // denoise with the conditionings switched
        Tensor<float> out =
            denoise(state, denoiser, c_tgt, c_src, prompts.null, cfg, schedule, &cnt);
        const bool flipped = clf.predict(out).label == target;
        res.attempts.push_back({tau, w, flipped, tensor_hash(out)});
        res.explanation = std::move(out);
        if (flipped) {
            res.flipped = true;
            res.used_tuple = {tau, w};
            break;
        }
    }
    res.denoiser_calls = cnt.denoiser_calls - base_den;
    res.classifier_queries = cnt.classifier_queries - base_clf;
    return res;
}

} // namespace cfx
