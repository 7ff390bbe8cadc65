// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration. Strict parsing: unknown keys are rejected so a typo in
// a config file fails loudly instead of silently falling back to a default.

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "cfx/dataset.hpp"
#include "cfx/denoiser.hpp"
#include "cfx/guidance.hpp"
#include "cfx/train.hpp"

namespace cfx {

inline constexpr int kConfigSchemaVersion = 1;

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
    if (!obj.is_object()) throw std::runtime_error("config: " + where + " must be an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.contains(key))
            throw std::runtime_error("config: unknown key '" + key + "' in " + where);
}

inline TrainConfig train_from_json(const nlohmann::json& j, const std::string& where) {
    check_keys(j, {"iterations", "batch_size", "learning_rate", "weight_decay", "seed"}, where);
    TrainConfig c;
    c.iterations = j.at("iterations");
    c.batch_size = j.at("batch_size");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.seed = j.at("seed");
    return c;
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"seed", c.seed}};
}

} // namespace detail

struct RunConfig {
    // artifact locations, all relative to the working directory unless absolute
    std::string data_dir = "runs/data";
    std::string models_dir = "runs/models";
    std::string output_dir = "runs/out";

    SyntheticSpec dataset;

    // diffusion schedule
    int t_train = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int num_inference_steps = 50;

    DenoiserConfig denoiser;
    TrainConfig denoiser_train{4000, 16, 2e-3, 0.0, 11};
    double cond_dropout = 0.1;

    TrainConfig classifier_train{600, 32, 1e-3, 0.0, 21};
    TrainConfig oracle_train{800, 32, 1e-3, 0.0, 22};
    TrainConfig identity_train{800, 32, 1e-3, 0.0, 23};
    TrainConfig ss_encoder_train{600, 32, 1e-3, 0.0, 24};
    int ss_bottleneck = 16;

    TrainConfig distill{800, 64, 0.01, 1e-4, 31};
    int n_context_tokens = 3;
    int n_class_tokens = 3;

    double edict_p = 0.93;
    std::vector<std::pair<int, double>> escalation = {{25, 3.0}, {30, 4.0}, {35, 4.0}, {35, 6.0}};
    GuidanceMode guidance_mode = GuidanceMode::Negative;
    bool use_context = true;

    int workers = 1;
    uint64_t seed = 0;

    int eval_count = 200;   // images drawn from the test split for evaluation

    nlohmann::json to_json() const {
        nlohmann::json esc = nlohmann::json::array();
        for (const auto& [tau, w] : escalation) esc.push_back({tau, w});
        return nlohmann::json{
            {"schema_version", kConfigSchemaVersion},
            {"paths",
             {{"data_dir", data_dir}, {"models_dir", models_dir}, {"output_dir", output_dir}}},
            {"dataset", spec_to_json(dataset)},
            {"schedule",
             {{"t_train", t_train},
              {"beta_start", beta_start},
              {"beta_end", beta_end},
              {"num_inference_steps", num_inference_steps}}},
            {"denoiser",
             {{"base", denoiser.base},
              {"cond_dim", denoiser.cond_dim},
              {"attn_dim", denoiser.attn_dim},
              {"time_dim", denoiser.time_dim},
              {"max_cond_len", denoiser.max_cond_len},
              {"cond_dropout", cond_dropout},
              {"train", detail::train_to_json(denoiser_train)}}},
            {"classifier", {{"train", detail::train_to_json(classifier_train)}}},
            {"oracle_net", {{"train", detail::train_to_json(oracle_train)}}},
            {"identity_net", {{"train", detail::train_to_json(identity_train)}}},
            {"ss_encoder",
             {{"bottleneck", ss_bottleneck}, {"train", detail::train_to_json(ss_encoder_train)}}},
            {"distill",
             {{"train", detail::train_to_json(distill)},
              {"n_context_tokens", n_context_tokens},
              {"n_class_tokens", n_class_tokens}}},
            {"edict", {{"p", edict_p}, {"escalation", esc}}},
            {"guidance", {{"mode", guidance_mode == GuidanceMode::Cfg ? "cfg" : "ng"},
                          {"use_context", use_context}}},
            {"eval", {{"count", eval_count}}},
            {"workers", workers},
            {"seed", seed}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        detail::check_keys(j,
                           {"schema_version", "paths", "dataset", "schedule", "denoiser",
                            "classifier", "oracle_net", "identity_net", "ss_encoder", "distill",
                            "edict", "guidance", "eval", "workers", "seed"},
                           "root");
        if (j.at("schema_version").get<int>() != kConfigSchemaVersion)
            throw std::runtime_error("config: unsupported schema_version");
        RunConfig c;
        const auto& paths = j.at("paths");
        detail::check_keys(paths, {"data_dir", "models_dir", "output_dir"}, "paths");
        c.data_dir = paths.at("data_dir");
        c.models_dir = paths.at("models_dir");
        c.output_dir = paths.at("output_dir");
        c.dataset = spec_from_json(j.at("dataset"));

        const auto& sch = j.at("schedule");
        detail::check_keys(sch, {"t_train", "beta_start", "beta_end", "num_inference_steps"},
                           "schedule");
        c.t_train = sch.at("t_train");
        c.beta_start = sch.at("beta_start");
        c.beta_end = sch.at("beta_end");
        c.num_inference_steps = sch.at("num_inference_steps");

        const auto& den = j.at("denoiser");
        detail::check_keys(
            den, {"base", "cond_dim", "attn_dim", "time_dim", "max_cond_len", "cond_dropout",
                  "train"},
            "denoiser");
        c.denoiser.channels = c.dataset.channels;
        c.denoiser.height = c.dataset.image_size;
        c.denoiser.width = c.dataset.image_size;
        c.denoiser.base = den.at("base");
        c.denoiser.cond_dim = den.at("cond_dim");
        c.denoiser.attn_dim = den.at("attn_dim");
        c.denoiser.time_dim = den.at("time_dim");
        c.denoiser.max_cond_len = den.at("max_cond_len");
        c.cond_dropout = den.at("cond_dropout");
        c.denoiser_train = detail::train_from_json(den.at("train"), "denoiser.train");

        detail::check_keys(j.at("classifier"), {"train"}, "classifier");
        c.classifier_train = detail::train_from_json(j.at("classifier").at("train"),
                                                     "classifier.train");
        detail::check_keys(j.at("oracle_net"), {"train"}, "oracle_net");
        c.oracle_train = detail::train_from_json(j.at("oracle_net").at("train"),
                                                 "oracle_net.train");
        detail::check_keys(j.at("identity_net"), {"train"}, "identity_net");
        c.identity_train = detail::train_from_json(j.at("identity_net").at("train"),
                                                   "identity_net.train");
        const auto& ss = j.at("ss_encoder");
        detail::check_keys(ss, {"bottleneck", "train"}, "ss_encoder");
        c.ss_bottleneck = ss.at("bottleneck");
        c.ss_encoder_train = detail::train_from_json(ss.at("train"), "ss_encoder.train");

        const auto& dst = j.at("distill");
        detail::check_keys(dst, {"train", "n_context_tokens", "n_class_tokens"}, "distill");
        c.distill = detail::train_from_json(dst.at("train"), "distill.train");
        c.n_context_tokens = dst.at("n_context_tokens");
        c.n_class_tokens = dst.at("n_class_tokens");

        const auto& ed = j.at("edict");
        detail::check_keys(ed, {"p", "escalation"}, "edict");
        c.edict_p = ed.at("p");
        c.escalation.clear();
        for (const auto& t : ed.at("escalation"))
            c.escalation.emplace_back(t.at(0).get<int>(), t.at(1).get<double>());

        const auto& gd = j.at("guidance");
        detail::check_keys(gd, {"mode", "use_context"}, "guidance");
        c.guidance_mode = guidance_mode_from_string(gd.at("mode"));
        c.use_context = gd.at("use_context");

        detail::check_keys(j.at("eval"), {"count"}, "eval");
        c.eval_count = j.at("eval").at("count");

        c.workers = j.at("workers");
        c.seed = j.at("seed");
        if (c.workers < 1) throw std::runtime_error("config: workers must be >= 1");
        return c;
    }
};

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    return RunConfig::from_json(nlohmann::json::parse(in));
}

inline void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config: " + path);
    out << cfg.to_json().dump(2) << "\n";
}

} // namespace cfx
