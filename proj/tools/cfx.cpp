// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the counterfactual explanation pipeline.
// Stages are separate subcommands so long runs can be split across
// invocations; every artifact lands under the config's path section.

#include <CLI11.hpp>

#include "cfx/workflow.hpp"

namespace {

struct Overrides {
    std::string config_path;
    int64_t seed = -1;
    int workers = 0;
    int tau = 0;
    double gs = 0;
    std::string mode;
    std::string tokens;
    std::string context;
    bool verbose = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "run configuration JSON");
    cmd->add_option("--seed", o.seed, "override the run seed");
    cmd->add_option("--workers", o.workers, "override worker count");
    cmd->add_option("--tau", o.tau, "fix the inversion depth (with --gs replaces escalation)");
    cmd->add_option("--gs", o.gs, "fix the guidance scale (with --tau replaces escalation)");
    cmd->add_option("--mode", o.mode, "guidance mode: cfg or ng")
        ->check(CLI::IsMember({"cfg", "ng"}));
    cmd->add_option("--tokens", o.tokens, "class token count: single or multi")
        ->check(CLI::IsMember({"single", "multi"}));
    cmd->add_option("--context", o.context, "context tokens in prompts: on or off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_flag("-v,--verbose", o.verbose, "progress on stderr");
}

cfx::RunConfig resolve(const Overrides& o) {
    cfx::RunConfig cfg =
        o.config_path.empty() ? cfx::RunConfig{} : cfx::load_config(o.config_path);
    if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
    if (o.workers > 0) cfg.workers = o.workers;
    if (!o.mode.empty()) cfg.guidance_mode = cfx::guidance_mode_from_string(o.mode);
    if (!o.tokens.empty()) cfg.n_class_tokens = o.tokens == "single" ? 1 : 3;
    if (!o.context.empty()) cfg.use_context = o.context == "on";
    if (o.tau > 0 && o.gs > 0) cfg.escalation = {{o.tau, o.gs}};
    else if (o.tau > 0 || o.gs > 0)
        throw CLI::ValidationError("--tau and --gs must be given together");
    return cfg;
}

cfx::DatasetBundle load_data(const cfx::RunConfig& cfg) { return cfx::load_dataset(cfg.data_dir); }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"counterfactual explanations for an opaque image classifier"};
    app.require_subcommand(1);

    Overrides o;
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    auto* train = app.add_subcommand("train", "train denoiser, classifier and metric models");
    auto* distill = app.add_subcommand("distill", "learn context and class token embeddings");
    auto* explain = app.add_subcommand("explain", "counterfactual for a single image");
    auto* evaluate = app.add_subcommand("evaluate", "run the benchmark over the test split");
    auto* report = app.add_subcommand("report", "render a side-by-side grid from a benchmark run");
    auto* serve = app.add_subcommand("classifier-serve",
                                     "serve classifier predictions over stdin/stdout");
    serve->group("");  // internal plumbing, hidden from help
    for (auto* cmd : {gen, train, distill, explain, evaluate, report, serve}) add_common(cmd, o);

    std::string input_png;
    int explain_index = 0;
    explain->add_option("--input", input_png, "PNG to explain (defaults to a test-split image)");
    explain->add_option("--index", explain_index, "test-split index when --input is absent");
    bool use_bridge = false;
    evaluate->add_flag("--bridge", use_bridge, "query the classifier in a child process");
    size_t report_rows = 16;
    report->add_option("--rows", report_rows, "max rows in the grid");

    CLI11_PARSE(app, argc, argv);

    try {
        cfx::RunConfig cfg = resolve(o);
        if (gen->parsed()) {
            cfx::stage_gen_data(cfg, o.verbose);
        } else if (train->parsed()) {
            cfx::stage_train(cfg, load_data(cfg), o.verbose);
        } else if (distill->parsed()) {
            auto data = load_data(cfg);
            auto models = cfx::load_trained_models(cfg);
            cfx::InProcessClassifier clf(models.classifier_net);
            cfx::stage_distill(cfg, data, models, clf, o.verbose);
        } else if (explain->parsed()) {
            auto data = load_data(cfg);
            auto models = cfx::load_trained_models(cfg);
            cfx::EmbeddingTable table =
                cfx::load_embedding_table(cfx::model_path(cfg, "distilled.ckpt"));
            cfx::InProcessClassifier clf(models.classifier_net);
            cfx::NoiseSchedule schedule = cfx::make_schedule(cfg);
            cfx::PromptSet prompts = cfx::build_prompts(table, cfg.n_context_tokens,
                                                        cfg.n_class_tokens, cfg.use_context);
            cfx::Tensor<float> x = input_png.empty()
                                       ? data.test.images.at(static_cast<size_t>(explain_index))
                                       : cfx::read_png(input_png);
            const int target = 1 - clf.predict(x).label;
            cfx::EscalationSchedule esc{cfg.escalation};
            auto res = cfx::generate_counterfactual(x, target, clf, prompts, models.denoiser,
                                                    schedule, esc, cfg.edict_p,
                                                    cfg.guidance_mode);
            std::filesystem::create_directories(cfg.output_dir);
            const auto out_png = std::filesystem::path(cfg.output_dir) / "explanation.png";
            cfx::write_png(out_png.string(), res.explanation);
            nlohmann::json j{{"source", res.source_class},
                             {"target", res.target_class},
                             {"flipped", res.flipped},
                             {"denoiser_calls", res.denoiser_calls},
                             {"classifier_queries", res.classifier_queries},
                             {"explanation", out_png.string()}};
            if (res.used_tuple) j["used_tuple"] = {res.used_tuple->first, res.used_tuple->second};
            std::cout << j.dump(2) << "\n";
        } else if (evaluate->parsed()) {
            auto data = load_data(cfg);
            auto models = cfx::load_trained_models(cfg);
            cfx::EmbeddingTable table =
                cfx::load_embedding_table(cfx::model_path(cfg, "distilled.ckpt"));
            std::unique_ptr<cfx::BlackBoxClassifier> clf;
            if (use_bridge) {
                const std::string ckpt = cfx::model_path(cfg, "classifier.ckpt");
                clf = std::make_unique<cfx::SubprocessClassifier>([ckpt] {
                    return std::unique_ptr<cfx::BlackBoxClassifier>(
                        new cfx::InProcessClassifier(cfx::load_convnet(ckpt, "classifier")));
                });
            } else {
                clf = std::make_unique<cfx::InProcessClassifier>(models.classifier_net);
            }
            auto out = cfx::stage_evaluate(cfg, data, models, table, *clf, true, o.verbose);
            std::cout << out.report.to_json().dump(2) << "\n";
        } else if (report->parsed()) {
            namespace fs = std::filesystem;
            std::ifstream mf(fs::path(cfg.output_dir) / "manifest.json");
            if (!mf) throw std::runtime_error("no manifest.json in " + cfg.output_dir);
            nlohmann::json manifest = nlohmann::json::parse(mf);
            std::vector<cfx::CounterfactualResult> results;
            for (const auto& rec : manifest.at("records")) {
                if (!rec.contains("original_file")) continue;
                cfx::CounterfactualResult r;
                r.original = cfx::read_png(
                    (fs::path(cfg.output_dir) / rec.at("original_file").get<std::string>())
                        .string());
                r.explanation = cfx::read_png(
                    (fs::path(cfg.output_dir) / rec.at("explanation_file").get<std::string>())
                        .string());
                results.push_back(std::move(r));
            }
            cfx::write_report(results, cfg.output_dir, report_rows);
            std::cout << (fs::path(cfg.output_dir) / "report_grid.png").string() << "\n";
        } else if (serve->parsed()) {
            cfx::InProcessClassifier clf(
                cfx::load_convnet(cfx::model_path(cfg, "classifier.ckpt"), "classifier"));
            cfx::serve_classifier(clf, 0, 1);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
