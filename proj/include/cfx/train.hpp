// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training loops. All of them are sequential and deterministic per seed:
// batches are drawn from a single RNG stream and gradients are accumulated
// in sample order.

#include <functional>
#include <iostream>

#include "cfx/dataset.hpp"
#include "cfx/denoiser.hpp"
#include "cfx/nets.hpp"

namespace cfx {

struct TrainConfig {
    int iterations = 1000;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    uint64_t seed = 1;

    void validate() const {
        if (iterations < 0 || batch_size <= 0 || learning_rate <= 0)
            throw std::invalid_argument("invalid train config");
    }
};

/// Caption used while pretraining the conditional denoiser: one frozen
/// vocabulary token per (attribute, value) pair.
inline std::vector<int> attribute_caption(const AttributeVector& a) {
    std::vector<int> ids;
    ids.reserve(a.size());
    for (size_t k = 0; k < a.size(); ++k)
        ids.push_back(tok::attribute(static_cast<int>(k), a[k]));
    return ids;
}

struct DenoiserTrainResult {
    Denoiser<float> denoiser;
    EmbeddingTable table;  // attribute-vocabulary rows updated
    std::vector<double> loss_history;
};

/// Pretrains the conditional denoiser on attribute captions, co-training the
/// attribute-vocabulary embedding rows. The conditioning is replaced by the
/// empty prompt at `cond_dropout` rate so the unconditional branch of the
/// guidance is defined. Template words and the null token stay frozen.
inline DenoiserTrainResult train_denoiser(const LabeledDataset& dataset,
                                          const NoiseSchedule& schedule, const TrainConfig& cfg,
                                          const EmbeddingTable& embeddings,
                                          const DenoiserConfig& dcfg, double cond_dropout = 0.1,
                                          bool verbose = false) {
    cfg.validate();
    if (dataset.size() == 0) throw std::invalid_argument("empty training dataset");
    const int K = static_cast<int>(dataset.attributes.front().size());
    const int D = embeddings.cond_dim;

    DenoiserTrainResult res;
    res.table = embeddings;
    res.denoiser = Denoiser<float>(dcfg, cfg.seed);
    auto& den = res.denoiser;

    // attribute vocab rows as a trainable pack
    nn::ParamPack<float> vocab;
    auto& vt = vocab.add("vocab.attr", {2 * K, D});
    for (int a = 0; a < K; ++a)
        for (int b = 0; b < 2; ++b) {
            const auto& r = res.table.row(tok::attribute(a, b));
            for (int j = 0; j < D; ++j) vt.at2(a * 2 + b, j) = r[static_cast<size_t>(j)];
        }

    nn::Adam<float> opt, vopt;
    opt.lr = static_cast<float>(cfg.learning_rate);
    opt.weight_decay = static_cast<float>(cfg.weight_decay);
    opt.init(den.params);
    vopt.lr = static_cast<float>(cfg.learning_rate);
    vopt.init(vocab);

    Rng rng(cfg.seed ^ 0xD1FFu);
    std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.t_train);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);

    nn::ParamPack<float> grads = den.params.zeros_like();
    nn::ParamPack<float> vgrads = vocab.zeros_like();
    const CondSeq<float> empty = null_cond<float>(res.table);

    for (int it = 0; it < cfg.iterations; ++it) {
        grads.zero();
        vgrads.zero();
        double loss_sum = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t idx = pick(rng);
            const int t = pick_t(rng);
            const bool drop = ud(rng) < cond_dropout;
            const Tensor<float>& x0 = dataset.images[idx];
            Tensor<float> eps(x0.shape);
            for (auto& v : eps.data) v = static_cast<float>(nd(rng));

            CondSeq<float> cond;
            std::vector<int> caption;
            if (drop) {
                cond = empty;
            } else {
                caption = attribute_caption(dataset.attributes[idx]);
                cond.token_ids = caption;
                cond.rows = Tensor<float>({K, D});
                for (int i = 0; i < K; ++i) {
                    int row = caption[static_cast<size_t>(i)] - tok::attribute(0, 0);
                    for (int j = 0; j < D; ++j) cond.rows.at2(i, j) = vt.at2(row, j);
                }
            }

            Tensor<float> x_t = forward_noise(x0, t, eps, schedule);
            DenoiserCache<float> cache;
            Tensor<float> pred = den.forward(x_t, t, cond, &cache);
            const float scale = 2.0f / static_cast<float>(pred.numel() * cfg.batch_size);
            Tensor<float> dpred(pred.shape);
            for (int64_t i = 0; i < pred.numel(); ++i) {
                float d = pred[i] - eps[i];
                loss_sum += static_cast<double>(d) * d;
                dpred[i] = scale * d;
            }
            Tensor<float> dcond;
            if (!drop) dcond = Tensor<float>({K, D});
            den.backward(cache, dpred, &grads, drop ? nullptr : &dcond);
            if (!drop)
                for (int i = 0; i < K; ++i) {
                    int row = caption[static_cast<size_t>(i)] - tok::attribute(0, 0);
                    for (int j = 0; j < D; ++j)
                        vgrads.tensors[0].at2(row, j) += dcond.at2(i, j);
                }
        }
        const double loss =
            loss_sum / static_cast<double>(cfg.batch_size) /
            static_cast<double>(dataset.images.front().numel());
        if (!std::isfinite(loss))
            throw std::runtime_error("denoiser training diverged (non-finite loss at iteration " +
                                     std::to_string(it) + ")");
        res.loss_history.push_back(loss);
        opt.step(den.params, grads);
        vopt.step(vocab, vgrads);
        if (verbose && (it % 200 == 0 || it + 1 == cfg.iterations))
            std::cerr << "  denoiser iter " << it << " loss " << loss << "\n";
    }

    for (int a = 0; a < K; ++a)
        for (int b = 0; b < 2; ++b) {
            auto& r = res.table.fixed_tokens.at(tok::attribute(a, b));
            for (int j = 0; j < D; ++j) r[static_cast<size_t>(j)] = vt.at2(a * 2 + b, j);
        }
    return res;
}

// ---------------------------------------------------------------------------
// Supervised heads

enum class HeadLoss { SoftmaxCE, SigmoidBCE };

/// Generic ConvNet trainer; `target(i)` yields the integer class (SoftmaxCE)
/// or bit vector (SigmoidBCE) for sample i.
inline ConvNet<float> train_convnet(const LabeledDataset& dataset, const ConvNetConfig& ncfg,
                                    const TrainConfig& cfg, HeadLoss loss_kind,
                                    const std::function<std::vector<float>(size_t)>& target,
                                    bool verbose = false) {
    cfg.validate();
    if (dataset.size() == 0) throw std::invalid_argument("empty training dataset");
    ConvNet<float> net(ncfg, cfg.seed);
    nn::Adam<float> opt;
    opt.lr = static_cast<float>(cfg.learning_rate);
    opt.weight_decay = static_cast<float>(cfg.weight_decay);
    opt.init(net.params);
    Rng rng(cfg.seed ^ 0xC1A55u);
    std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
    nn::ParamPack<float> grads = net.params.zeros_like();

    for (int it = 0; it < cfg.iterations; ++it) {
        grads.zero();
        double loss_sum = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t idx = pick(rng);
            ConvNetCache<float> cache;
            Tensor<float> logits = net.forward(dataset.images[idx], &cache);
            std::vector<float> y = target(idx);
            Tensor<float> dlogits(logits.shape);
            if (loss_kind == HeadLoss::SoftmaxCE) {
                auto p = softmax_vec(logits);
                int cls = static_cast<int>(y[0]);
                loss_sum += -std::log(std::max(1e-12f, p[static_cast<size_t>(cls)]));
                for (int64_t i = 0; i < logits.numel(); ++i)
                    dlogits[i] = (p[static_cast<size_t>(i)] - (i == cls ? 1.0f : 0.0f)) /
                                 static_cast<float>(cfg.batch_size);
            } else {
                for (int64_t i = 0; i < logits.numel(); ++i) {
                    float s = 1.0f / (1.0f + std::exp(-logits[i]));
                    float yi = y[static_cast<size_t>(i)];
                    loss_sum += -(yi * std::log(std::max(1e-12f, s)) +
                                  (1 - yi) * std::log(std::max(1e-12f, 1 - s)));
                    dlogits[i] = (s - yi) / static_cast<float>(cfg.batch_size);
                }
            }
            net.backward(cache, dlogits, &grads);
        }
        if (!std::isfinite(loss_sum))
            throw std::runtime_error("convnet training diverged at iteration " +
                                     std::to_string(it));
        opt.step(net.params, grads);
        if (verbose && it % 200 == 0)
            std::cerr << "  convnet iter " << it << " loss "
                      << loss_sum / cfg.batch_size << "\n";
    }
    return net;
}

inline AutoEncoder<float> train_autoencoder(const LabeledDataset& dataset,
                                            const ConvNetConfig& ncfg, const TrainConfig& cfg,
                                            bool verbose = false) {
    cfg.validate();
    AutoEncoder<float> ae(ncfg, cfg.seed);
    nn::Adam<float> eopt, dopt;
    eopt.lr = dopt.lr = static_cast<float>(cfg.learning_rate);
    eopt.init(ae.encoder.params);
    dopt.init(ae.dec_params);
    Rng rng(cfg.seed ^ 0xAE0Eu);
    std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
    nn::ParamPack<float> egrads = ae.encoder.params.zeros_like();
    nn::ParamPack<float> dgrads = ae.dec_params.zeros_like();

    for (int it = 0; it < cfg.iterations; ++it) {
        egrads.zero();
        dgrads.zero();
        double loss_sum = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const size_t idx = pick(rng);
            const Tensor<float>& x = dataset.images[idx];
            AutoEncCache<float> cache;
            Tensor<float> rec = ae.reconstruct(x, &cache);
            Tensor<float> drec(rec.shape);
            const float scale = 2.0f / static_cast<float>(rec.numel() * cfg.batch_size);
            for (int64_t i = 0; i < rec.numel(); ++i) {
                float d = rec[i] - x[i];
                loss_sum += static_cast<double>(d) * d;
                drec[i] = scale * d;
            }
            ae.backward(cache, drec, &egrads, &dgrads);
        }
        if (!std::isfinite(loss_sum))
            throw std::runtime_error("autoencoder training diverged at iteration " +
                                     std::to_string(it));
        eopt.step(ae.encoder.params, egrads);
        dopt.step(ae.dec_params, dgrads);
        if (verbose && it % 200 == 0)
            std::cerr << "  autoenc iter " << it << " loss "
                      << loss_sum / cfg.batch_size / dataset.images.front().numel() << "\n";
    }
    return ae;
}

} // namespace cfx
