// SPDX-License-Identifier: Apache-2.0
#pragma once

// Staged orchestration shared by the command-line tool and the test suites:
// data generation, model training, token distillation, evaluation. Each
// stage persists its outputs so later stages can run in separate processes.

#include <filesystem>

#include "cfx/bench.hpp"
#include "cfx/bridge.hpp"
#include "cfx/distill.hpp"

namespace cfx {

inline std::string model_path(const RunConfig& cfg, const std::string& name) {
    return (std::filesystem::path(cfg.models_dir) / name).string();
}

inline NoiseSchedule make_schedule(const RunConfig& cfg) {
    return build_schedule(cfg.t_train, cfg.beta_start, cfg.beta_end, cfg.num_inference_steps);
}

// ---------------------------------------------------------------------------
// Stage: gen-data

inline DatasetBundle stage_gen_data(const RunConfig& cfg, bool verbose = false) {
    DatasetBundle bundle = generate_dataset(cfg.dataset);
    save_dataset(bundle, cfg.dataset, cfg.data_dir);
    if (verbose)
        std::cerr << "[gen-data] wrote " << bundle.train.size() << "/" << bundle.val.size() << "/"
                  << bundle.test.size() << " images to " << cfg.data_dir << "\n";
    return bundle;
}

// ---------------------------------------------------------------------------
// Stage: train (denoiser, classifier, metric models)

struct TrainedModels {
    Denoiser<float> denoiser;
    EmbeddingTable table;   // frozen vocabulary after pretraining
    ConvNet<float> classifier_net;
    MetricModels metrics;
};

inline ConvNetConfig small_net_config(const RunConfig& cfg, int out_dim) {
    ConvNetConfig nc;
    nc.in_ch = cfg.dataset.channels;
    nc.size = cfg.dataset.image_size;
    nc.out_dim = out_dim;
    return nc;
}

inline TrainedModels stage_train(const RunConfig& cfg, const DatasetBundle& data,
                                 bool verbose = false) {
    std::filesystem::create_directories(cfg.models_dir);
    TrainedModels m;

    EmbeddingTable base = EmbeddingTable::make_base(cfg.denoiser.cond_dim,
                                                    cfg.dataset.num_attributes, cfg.seed ^ 0xE0Bu);
    DenoiserTrainResult dres = train_denoiser(data.train, make_schedule(cfg), cfg.denoiser_train,
                                              base, cfg.denoiser, cfg.cond_dropout, verbose);
    m.denoiser = std::move(dres.denoiser);
    m.table = std::move(dres.table);
    save_denoiser(model_path(cfg, "denoiser.ckpt"), m.denoiser);
    save_embedding_table(model_path(cfg, "vocab.ckpt"), m.table);

    m.classifier_net = train_convnet(
        data.train, small_net_config(cfg, 2), cfg.classifier_train, HeadLoss::SoftmaxCE,
        [&](size_t i) { return std::vector<float>{static_cast<float>(data.train.labels[i])}; },
        verbose);
    save_convnet(model_path(cfg, "classifier.ckpt"), m.classifier_net, "classifier");

    const int K = cfg.dataset.num_attributes;
    m.metrics.oracle_net = train_convnet(
        data.train, small_net_config(cfg, K), cfg.oracle_train, HeadLoss::SigmoidBCE,
        [&](size_t i) {
            std::vector<float> y(static_cast<size_t>(K));
            for (int k = 0; k < K; ++k)
                y[static_cast<size_t>(k)] = data.train.attributes[i][static_cast<size_t>(k)];
            return y;
        },
        verbose);
    save_convnet(model_path(cfg, "oracle.ckpt"), m.metrics.oracle_net, "oracle");

    m.metrics.identity_net = train_convnet(
        data.train, small_net_config(cfg, cfg.dataset.identities), cfg.identity_train,
        HeadLoss::SoftmaxCE,
        [&](size_t i) {
            return std::vector<float>{static_cast<float>(data.train.identity_ids[i])};
        },
        verbose);
    save_convnet(model_path(cfg, "identity.ckpt"), m.metrics.identity_net, "identity");

    m.metrics.ss_encoder =
        train_autoencoder(data.train, small_net_config(cfg, cfg.ss_bottleneck),
                          cfg.ss_encoder_train, verbose);
    save_autoencoder(model_path(cfg, "ss_encoder.ckpt"), m.metrics.ss_encoder);
    return m;
}

inline TrainedModels load_trained_models(const RunConfig& cfg) {
    TrainedModels m;
    m.denoiser = load_denoiser(model_path(cfg, "denoiser.ckpt"));
    m.table = load_embedding_table(model_path(cfg, "vocab.ckpt"));
    m.classifier_net = load_convnet(model_path(cfg, "classifier.ckpt"), "classifier");
    m.metrics.oracle_net = load_convnet(model_path(cfg, "oracle.ckpt"), "oracle");
    m.metrics.identity_net = load_convnet(model_path(cfg, "identity.ckpt"), "identity");
    m.metrics.ss_encoder = load_autoencoder(model_path(cfg, "ss_encoder.ckpt"));
    return m;
}

// ---------------------------------------------------------------------------
// Stage: distill

inline EmbeddingTable stage_distill(const RunConfig& cfg, const DatasetBundle& data,
                                    const TrainedModels& models,
                                    const BlackBoxClassifier& classifier, bool verbose = false) {
    NoiseSchedule schedule = make_schedule(cfg);
    EmbeddingTable table = models.table;
    std::vector<int> ctx_ids, cls_ids;
    for (int i = 0; i < cfg.n_context_tokens; ++i) ctx_ids.push_back(tok::context(i));
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < cfg.n_class_tokens; ++i) cls_ids.push_back(tok::cls(c, i));
    init_learnable_rows(table, ctx_ids, cfg.seed ^ 0xC7Bu);
    init_learnable_rows(table, cls_ids, cfg.seed ^ 0xC7Cu);

    if (verbose) std::cerr << "[distill] context tokens\n";
    table = train_context_embeddings(data.train, models.denoiser, schedule, cfg.distill, table,
                                     cfg.n_context_tokens);
    for (int c = 0; c < 2; ++c) {
        if (verbose) std::cerr << "[distill] class " << c << " tokens\n";
        TrainConfig tc = cfg.distill;
        tc.seed = cfg.distill.seed + 1 + static_cast<uint64_t>(c);
        table = train_class_embeddings(data.train, classifier, c, models.denoiser, schedule, tc,
                                       table, cfg.n_context_tokens, cfg.n_class_tokens);
    }
    save_embedding_table(model_path(cfg, "distilled.ckpt"), table);
    return table;
}

// ---------------------------------------------------------------------------
// Stage: evaluate

inline LabeledDataset eval_subset(const LabeledDataset& test, int count) {
    if (count <= 0 || count >= static_cast<int>(test.size())) return test;
    LabeledDataset s;
    s.split = test.split;
    for (int i = 0; i < count; ++i) {
        s.images.push_back(test.images[static_cast<size_t>(i)]);
        s.labels.push_back(test.labels[static_cast<size_t>(i)]);
        s.attributes.push_back(test.attributes[static_cast<size_t>(i)]);
        s.identity_ids.push_back(test.identity_ids[static_cast<size_t>(i)]);
    }
    return s;
}

inline BenchmarkOutput stage_evaluate(const RunConfig& cfg, const DatasetBundle& data,
                                      const TrainedModels& models, const EmbeddingTable& distilled,
                                      const BlackBoxClassifier& classifier,
                                      bool persist_images = true, bool verbose = false) {
    NoiseSchedule schedule = make_schedule(cfg);
    PromptSet prompts =
        build_prompts(distilled, cfg.n_context_tokens, cfg.n_class_tokens, cfg.use_context);
    LabeledDataset subset = eval_subset(data.test, cfg.eval_count);
    return run_benchmark(subset, classifier, prompts, models.denoiser, schedule, cfg,
                         models.metrics, persist_images, verbose);
}

} // namespace cfx
