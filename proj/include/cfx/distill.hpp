// SPDX-License-Identifier: Apache-2.0
#pragma once

// Token-embedding distillation: context tokens are learned from the whole
// dataset, class tokens from the subset the classifier predicts as that
// class. The denoiser stays frozen; plain SGD with decoupled weight decay
// updates only the designated learnable rows.

#include "cfx/classifier.hpp"
#include "cfx/denoiser.hpp"
#include "cfx/train.hpp"

namespace cfx {

/// Adds freshly initialized learnable rows (standard normal scaled by the
/// fixed-token RMS). Existing rows are an error.
inline void init_learnable_rows(EmbeddingTable& table, const std::vector<int>& ids,
                                uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    const double scale = table.fixed_rms();
    for (int id : ids) {
        std::vector<float> r(static_cast<size_t>(table.cond_dim));
        for (auto& v : r) v = static_cast<float>(nd(rng) * scale);
        table.add_learnable(id, std::move(r));
    }
}

namespace detail {

/// Shared inner loop: optimizes the learnable rows named in `trained_ids`
/// under a fixed prompt over `indices` of `dataset`.
inline void distill_rows(const std::vector<const Tensor<float>*>& images,
                         const PromptTemplate& prompt, const std::vector<int>& trained_ids,
                         const Denoiser<float>& denoiser, const NoiseSchedule& schedule,
                         const TrainConfig& cfg, EmbeddingTable& table) {
    cfg.validate();
    if (images.empty()) throw std::invalid_argument("distill: empty image set");
    const int D = table.cond_dim;
    const std::vector<int> prompt_ids = prompt.token_ids();
    const int L = static_cast<int>(prompt_ids.size());

    // positions in the prompt that receive gradient
    std::vector<std::pair<int, int>> trained_pos;  // (position, index into trained_ids)
    for (int i = 0; i < L; ++i)
        for (size_t j = 0; j < trained_ids.size(); ++j)
            if (prompt_ids[static_cast<size_t>(i)] == trained_ids[j])
                trained_pos.emplace_back(i, static_cast<int>(j));

    nn::Sgd<float> opt;
    opt.lr = static_cast<float>(cfg.learning_rate);
    opt.weight_decay = static_cast<float>(cfg.weight_decay);

    Rng rng(cfg.seed ^ 0xD157u);
    std::uniform_int_distribution<size_t> pick(0, images.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.t_train);
    std::normal_distribution<double> nd(0.0, 1.0);

    std::vector<std::vector<float>> row_grads(trained_ids.size(),
                                              std::vector<float>(static_cast<size_t>(D)));

    for (int it = 0; it < cfg.iterations; ++it) {
        for (auto& g : row_grads) std::fill(g.begin(), g.end(), 0.0f);
        CondSeq<float> cond = render_tokens<float>(prompt_ids, table);
        double loss_sum = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Tensor<float>& x0 = *images[pick(rng)];
            const int t = pick_t(rng);
            Tensor<float> eps(x0.shape);
            for (auto& v : eps.data) v = static_cast<float>(nd(rng));
            Tensor<float> x_t = forward_noise(x0, t, eps, schedule);
            DenoiserCache<float> cache;
            Tensor<float> pred = denoiser.forward(x_t, t, cond, &cache);
            Tensor<float> dpred(pred.shape);
            // gradient of the squared-L2 score-matching loss, batch mean
            const float scale = 2.0f / static_cast<float>(cfg.batch_size);
            for (int64_t i = 0; i < pred.numel(); ++i) {
                float d = pred[i] - eps[i];
                loss_sum += static_cast<double>(d) * d;
                dpred[i] = scale * d;
            }
            Tensor<float> dcond({L, D});
            denoiser.backward(cache, dpred, nullptr, &dcond);
            for (const auto& [pos, j] : trained_pos)
                for (int k = 0; k < D; ++k)
                    row_grads[static_cast<size_t>(j)][static_cast<size_t>(k)] +=
                        dcond.at2(pos, k);
        }
        if (!std::isfinite(loss_sum))
            throw std::runtime_error("embedding distillation diverged at iteration " +
                                     std::to_string(it));
        for (size_t j = 0; j < trained_ids.size(); ++j) {
            auto& row = table.learnable_row(trained_ids[j]);
            opt.step(row.data(), row_grads[j].data(), D);
        }
    }
}

} // namespace detail

/// Learns the context-token rows on the full dataset, labels unused.
inline EmbeddingTable train_context_embeddings(const LabeledDataset& dataset,
                                               const Denoiser<float>& denoiser,
                                               const NoiseSchedule& schedule,
                                               const TrainConfig& cfg, EmbeddingTable table,
                                               int n_context_tokens) {
    std::vector<int> ids;
    for (int i = 0; i < n_context_tokens; ++i) ids.push_back(tok::context(i));
    std::vector<const Tensor<float>*> images;
    images.reserve(dataset.size());
    for (const auto& img : dataset.images) images.push_back(&img);
    detail::distill_rows(images, PromptTemplate::context_prompt(n_context_tokens), ids, denoiser,
                         schedule, cfg, table);
    return table;
}

/// Learns class-token rows for `class_id` on the classifier-filtered subset.
/// Context rows stay frozen. The classifier is consumed via predict only.
inline EmbeddingTable train_class_embeddings(const LabeledDataset& dataset,
                                             const BlackBoxClassifier& classifier, int class_id,
                                             const Denoiser<float>& denoiser,
                                             const NoiseSchedule& schedule, const TrainConfig& cfg,
                                             EmbeddingTable table, int n_context_tokens,
                                             int n_class_tokens) {
    std::vector<const Tensor<float>*> filtered;
    for (const auto& img : dataset.images)
        if (classifier.predict(img).label == class_id) filtered.push_back(&img);
    if (filtered.empty())
        throw std::runtime_error("no images predicted as class " + std::to_string(class_id) +
                                 "; cannot distill its embedding");
    std::vector<int> ids;
    for (int i = 0; i < n_class_tokens; ++i) ids.push_back(tok::cls(class_id, i));
    detail::distill_rows(filtered,
                         PromptTemplate::class_prompt(n_context_tokens, class_id, n_class_tokens),
                         ids, denoiser, schedule, cfg, table);
    return table;
}

} // namespace cfx
