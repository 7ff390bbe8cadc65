// SPDX-License-Identifier: Apache-2.0
#pragma once

// Evaluation driver: runs the counterfactual pipeline over an evaluation
// split, persists artifacts, computes the metric suite, and writes a
// deterministic manifest. Wall-clock timing goes into a separate sidecar so
// the manifest itself is byte-identical across reruns of the same config.

#include <chrono>
#include <filesystem>
#include <fstream>

#include "cfx/checkpoint.hpp"
#include "cfx/config.hpp"
#include "cfx/image_io.hpp"
#include "cfx/metrics.hpp"
#include "cfx/nets.hpp"
#include "cfx/pipeline.hpp"

namespace cfx {

/// Frozen models backing the metric suite. The oracle net provides both the
/// attribute predictions (MNAC, CD) and, through its penultimate layer, the
/// FID feature space. The identity net backs FVA/FS and the autoencoder
/// bottleneck backs the self-supervised similarity score.
struct MetricModels {
    ConvNet<float> oracle_net;    // sigmoid multi-label over attributes
    ConvNet<float> identity_net;  // softmax over identities
    AutoEncoder<float> ss_encoder;

    FeatureFn fid_features() const {
        return [this](const Tensor<float>& x) {
            Tensor<float> feat;
            oracle_net.forward(x, nullptr, &feat);
            return std::vector<double>(feat.data.begin(), feat.data.end());
        };
    }

    FeatureFn identity_features() const {
        return [this](const Tensor<float>& x) {
            Tensor<float> feat;
            identity_net.forward(x, nullptr, &feat);
            return std::vector<double>(feat.data.begin(), feat.data.end());
        };
    }

    FeatureFn ss_features() const {
        return [this](const Tensor<float>& x) {
            Tensor<float> z = ss_encoder.embed(x);
            return std::vector<double>(z.data.begin(), z.data.end());
        };
    }

    OracleFn attribute_oracle() const {
        return [this](const Tensor<float>& x) {
            Tensor<float> logits = oracle_net.forward(x);
            AttributeVector a(static_cast<size_t>(logits.numel()));
            for (int64_t k = 0; k < logits.numel(); ++k) a[static_cast<size_t>(k)] = logits[k] > 0;
            return a;
        };
    }
};

struct BenchmarkOutput {
    std::vector<CounterfactualResult> results;
    MetricReport report;
    nlohmann::json manifest;
    std::vector<double> per_image_seconds;
};

inline MetricReport compute_metrics(const std::vector<CounterfactualResult>& results,
                                    const MetricModels& models,
                                    const BlackBoxClassifier& classifier,
                                    double flops_per_call, uint64_t seed) {
    MetricReport rep;
    rep.n_images = static_cast<int>(results.size());
    if (results.empty()) return rep;  // all-zero report for an empty evaluation
    rep.sr = success_rate(results);
    rep.flops_per_counterfactual = flops_per_call;

    std::vector<Tensor<float>> originals, valid_cfs;
    std::vector<bool> valid;
    std::vector<std::pair<const Tensor<float>*, const Tensor<float>*>> pairs;
    for (const auto& r : results) {
        originals.push_back(r.original);
        valid.push_back(r.flipped);
        if (r.flipped) {
            valid_cfs.push_back(r.explanation);
            pairs.emplace_back(&r.original, &r.explanation);
        }
        rep.mean_denoiser_calls += static_cast<double>(r.denoiser_calls);
    }
    rep.mean_denoiser_calls /= static_cast<double>(results.size());
    rep.n_valid = static_cast<int>(valid_cfs.size());

    const FeatureFn fid_fn = models.fid_features();
    const FeatureFn id_fn = models.identity_features();
    const FeatureFn ss_fn = models.ss_features();
    const OracleFn oracle = models.attribute_oracle();

    if (rep.n_valid >= 2) {
        rep.fid = fid(originals, valid_cfs, fid_fn);
        try {
            rep.sfid = sfid(originals, [&] {
                std::vector<Tensor<float>> cfs;
                for (const auto& r : results) cfs.push_back(r.explanation);
                return cfs;
            }(), valid, fid_fn, seed ^ 0x5F1Du);
        } catch (const std::invalid_argument&) {
            // the random split left a half with too few valid counterfactuals;
            // the split estimate stays at its default rather than aborting
        }
    }
    for (const auto& [x, cf] : pairs) {
        rep.fs += fs(*x, *cf, id_fn);
        rep.fva += fva(*x, *cf, id_fn);
        rep.s3 += cosine_similarity(ss_fn(*x), ss_fn(*cf));
    }
    if (!pairs.empty()) {
        rep.fs /= static_cast<double>(pairs.size());
        rep.fva /= static_cast<double>(pairs.size());
        rep.s3 /= static_cast<double>(pairs.size());
    }
    rep.mnac = mnac(pairs, oracle);
    if (rep.n_valid >= 30) {
        std::vector<AttributeVector> oa, ca;
        for (const auto& [x, cf] : pairs) {
            oa.push_back(oracle(*x));
            ca.push_back(oracle(*cf));
        }
        rep.cd = cd(oa, ca);
    }
    double cout_sum = 0;
    for (const auto& r : results)
        if (r.flipped)
            cout_sum += cout_metric(r.original, r.explanation, r.source_class, r.target_class,
                                    classifier);
    rep.cout = pairs.empty() ? 0.0 : cout_sum / static_cast<double>(pairs.size());
    return rep;
}

/// Runs the pipeline over `eval_set`, writing PNG artifacts, a deterministic
/// manifest.json, and a timing.json sidecar into `output_dir`. The manifest
/// carries the config echo, per-image records with artifact hashes, and the
/// final metrics; nothing time-dependent goes in it.
inline BenchmarkOutput run_benchmark(const LabeledDataset& eval_set,
                                     const BlackBoxClassifier& classifier,
                                     const PromptSet& prompts, const Denoiser<float>& denoiser,
                                     const NoiseSchedule& schedule, const RunConfig& cfg,
                                     const MetricModels& models, bool persist_images = true,
                                     bool verbose = false) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    if (persist_images) fs::create_directories(fs::path(cfg.output_dir) / "images");

    EscalationSchedule esc{cfg.escalation};
    esc.validate(schedule);

    BenchmarkOutput out;
    nlohmann::json records = nlohmann::json::array();
    const size_t n = eval_set.size();
    for (size_t i = 0; i < n; ++i) {
        const Tensor<float>& x = eval_set.images[i];
        const int source = classifier.predict(x).label;
        const int target = 1 - source;
        const auto t0 = std::chrono::steady_clock::now();
        CounterfactualResult r = generate_counterfactual(x, target, classifier, prompts, denoiser,
                                                         schedule, esc, cfg.edict_p,
                                                         cfg.guidance_mode);
        const auto t1 = std::chrono::steady_clock::now();
        out.per_image_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());

        nlohmann::json rec{{"index", i},
                           {"source", r.source_class},
                           {"target", r.target_class},
                           {"flipped", r.flipped},
                           {"denoiser_calls", r.denoiser_calls},
                           {"classifier_queries", r.classifier_queries},
                           {"original_hash", hash_hex(tensor_hash(r.original))},
                           {"explanation_hash", hash_hex(tensor_hash(r.explanation))}};
        if (r.used_tuple) rec["used_tuple"] = {r.used_tuple->first, r.used_tuple->second};
        nlohmann::json attempts = nlohmann::json::array();
        for (const auto& a : r.attempts)
            attempts.push_back({{"tau", a.tau},
                                {"w", a.w},
                                {"flipped", a.flipped},
                                {"output_hash", hash_hex(a.output_hash)}});
        rec["attempts"] = std::move(attempts);
        if (persist_images) {
            char orig_name[48], cf_name[48];
            std::snprintf(orig_name, sizeof(orig_name), "images/orig_%04zu.png", i);
            std::snprintf(cf_name, sizeof(cf_name), "images/cf_%04zu.png", i);
            write_png((fs::path(cfg.output_dir) / orig_name).string(), r.original);
            write_png((fs::path(cfg.output_dir) / cf_name).string(), r.explanation);
            rec["original_file"] = orig_name;
            rec["explanation_file"] = cf_name;
        }
        records.push_back(std::move(rec));
        out.results.push_back(std::move(r));

        // incremental flush so a long run can be inspected (and resumed from
        // its artifacts) while in flight
        {
            std::ofstream pf(fs::path(cfg.output_dir) / "records.partial.json");
            pf << records.dump(2) << "\n";
        }
        if (verbose)
            std::cerr << "[bench] " << (i + 1) << "/" << n
                      << (out.results.back().flipped ? " flip" : " miss") << "\n";
    }

    out.report = compute_metrics(out.results, models, classifier, denoiser.flops_per_call(),
                                 cfg.seed);

    out.manifest = nlohmann::json{{"schema_version", 1},
                                  {"config", cfg.to_json()},
                                  {"records", std::move(records)},
                                  {"metrics", out.report.to_json()}};
    {
        std::ofstream mf(fs::path(cfg.output_dir) / "manifest.json");
        mf << out.manifest.dump(2) << "\n";
    }
    {
        double total = std::accumulate(out.per_image_seconds.begin(),
                                       out.per_image_seconds.end(), 0.0);
        nlohmann::json timing{{"per_image_seconds", out.per_image_seconds},
                              {"total_seconds", total},
                              {"mean_seconds",
                               out.per_image_seconds.empty()
                                   ? 0.0
                                   : total / static_cast<double>(out.per_image_seconds.size())}};
        std::ofstream tf(fs::path(cfg.output_dir) / "timing.json");
        tf << timing.dump(2) << "\n";
    }
    fs::remove(fs::path(cfg.output_dir) / "records.partial.json");
    return out;
}

/// Side-by-side report grid: each row is [original | counterfactual | abs
/// difference], separated by one-pixel white gutters.
inline Tensor<float> report_grid(const std::vector<CounterfactualResult>& results,
                                 size_t max_rows = 16) {
    if (results.empty()) throw std::invalid_argument("report_grid: no results");
    const auto& shape = results.front().original.shape;
    const int ch = shape[0], h = shape[1], w = shape[2];
    const size_t rows = std::min(max_rows, results.size());
    const int gh = static_cast<int>(rows) * (h + 1) - 1;
    const int gw = 3 * (w + 1) - 1;
    Tensor<float> grid({ch, gh, gw});
    std::fill(grid.data.begin(), grid.data.end(), 1.0f);
    for (size_t r = 0; r < rows; ++r) {
        const auto& res = results[r];
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const float o = res.original.at3(c, y, x);
                    const float e = res.explanation.at3(c, y, x);
                    const int gy = static_cast<int>(r) * (h + 1) + y;
                    grid.at3(c, gy, x) = o;
                    grid.at3(c, gy, (w + 1) + x) = e;
                    // abs diff mapped onto [-1, 1] (0 diff renders black)
                    grid.at3(c, gy, 2 * (w + 1) + x) = std::min(1.0f, std::abs(e - o)) * 2.0f - 1.0f;
                }
    }
    return grid;
}

inline void write_report(const std::vector<CounterfactualResult>& results,
                         const std::string& output_dir, size_t max_rows = 16) {
    namespace fs = std::filesystem;
    fs::create_directories(output_dir);
    write_png((fs::path(output_dir) / "report_grid.png").string(), report_grid(results, max_rows));
}

} // namespace cfx
