#include "steerlab/error.hpp"
#include "steerlab/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace steerlab;

namespace {

struct Overrides {
    std::string config;
    std::string model;
    std::string vocab;
    std::vector<std::string> prompts;
    std::string task;
    std::string target_label;
    std::string opposite_label;
    std::string out;
    std::string bank;
    std::string rules;
    std::string judge;
    std::string scope;
    std::string sweep_split;
    std::vector<int> layers;
    std::optional<int> layer;
    std::optional<float> alpha;
    std::vector<float> alpha_grid;
    std::optional<int> k;
    std::optional<int> max_new_tokens;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<double> degeneracy_threshold;
    bool normalize = false;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "Experiment config (JSON)");
    cmd->add_option("--model", o.model, "Model container");
    cmd->add_option("--vocab", o.vocab, "Vocabulary file (default: from the model metadata)");
    cmd->add_option("--prompts", o.prompts, "Prompt files (JSON lines)");
    cmd->add_option("--task", o.task, "Task name");
    cmd->add_option("--target-label", o.target_label, "Target label");
    cmd->add_option("--opposite-label", o.opposite_label, "Opposite label");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--bank", o.bank, "Direction bank path");
    cmd->add_option("--rules", o.rules, "Judge rules file");
    cmd->add_option("--judge", o.judge, "Judge mode")->check(CLI::IsMember({"local", "remote"}));
    cmd->add_option("--scope", o.scope, "Intervention positions")->check(CLI::IsMember({"all", "prompt_only"}));
    cmd->add_option("--sweep-split", o.sweep_split, "Split consumed by sweeps");
    cmd->add_option("--layers", o.layers, "Layers to estimate / sweep");
    cmd->add_option("--layer", o.layer, "Intervention layer");
    cmd->add_option("--alpha", o.alpha, "Intervention strength");
    cmd->add_option("--alpha-grid", o.alpha_grid, "Alpha values for sweeps");
    cmd->add_option("-k,--k-last-tokens", o.k, "Tokens averaged per prompt");
    cmd->add_option("--max-new-tokens", o.max_new_tokens, "Generation length");
    cmd->add_option("--seed", o.seed, "Seed for splitting and sampling");
    cmd->add_option("--workers", o.workers, "Concurrent generations");
    cmd->add_option("--degeneracy-threshold", o.degeneracy_threshold, "Max degenerate fraction for alpha selection");
    cmd->add_flag("--normalize", o.normalize, "Store unit-length directions");
}

ExperimentConfig build_config(const Overrides& o) {
    ExperimentConfig cfg;
    if (!o.config.empty()) cfg = ExperimentConfig::load(o.config);
    if (!o.model.empty()) cfg.model = o.model;
    if (!o.vocab.empty()) cfg.vocab = o.vocab;
    if (!o.prompts.empty()) cfg.prompts = o.prompts;
    // Command-line paths are relative to the working directory, so make them
    // absolute before they meet a config-relative base.
    auto absolute = [](const std::string& p) { return fs::absolute(p).lexically_normal().string(); };
    if (!o.config.empty()) {
        if (!o.model.empty()) cfg.model = absolute(o.model);
        if (!o.vocab.empty()) cfg.vocab = absolute(o.vocab);
        for (auto& p : cfg.prompts) {
            if (!o.prompts.empty()) p = absolute(p);
        }
    }
    if (!o.task.empty()) cfg.task.name = o.task;
    if (!o.target_label.empty()) cfg.task.target_label = o.target_label;
    if (!o.opposite_label.empty()) cfg.task.opposite_label = o.opposite_label;
    if (!o.out.empty()) cfg.output_dir = o.config.empty() ? o.out : absolute(o.out);
    if (!o.bank.empty()) cfg.bank = o.config.empty() ? o.bank : absolute(o.bank);
    if (!o.rules.empty()) cfg.judge.rules = o.config.empty() ? o.rules : absolute(o.rules);
    if (!o.judge.empty()) cfg.judge.kind = o.judge == "remote" ? JudgeKind::remote : JudgeKind::local;
    if (!o.scope.empty()) cfg.scope = intervention_scope_from_string(o.scope);
    if (!o.sweep_split.empty()) cfg.sweep_split = split_from_string(o.sweep_split);
    if (!o.layers.empty()) cfg.layers = o.layers;
    if (o.layer) cfg.layer = o.layer;
    if (o.alpha) cfg.alpha = o.alpha;
    if (!o.alpha_grid.empty()) cfg.alpha_grid = o.alpha_grid;
    if (o.k) cfg.k_last_tokens = *o.k;
    if (o.max_new_tokens) cfg.generation.max_new_tokens = *o.max_new_tokens;
    if (o.seed) cfg.seed = *o.seed;
    if (o.workers) cfg.workers = *o.workers;
    if (o.degeneracy_threshold) cfg.degeneracy_threshold = *o.degeneracy_threshold;
    if (o.normalize) cfg.normalize = true;
    return cfg;
}

void print_line(const json& j) {
    std::cout << j.dump() << "\n";
}

std::vector<std::string> default_report_files(const ExperimentConfig& cfg) {
    std::vector<std::string> files;
    const fs::path out(cfg.resolve(cfg.output_dir));
    for (const char* sub : {"runs", "sweeps"}) {
        const fs::path dir = out / sub;
        if (!fs::exists(dir)) continue;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.path().extension() == ".json") files.push_back(e.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"steerlab: activation steering experiments"};
    app.require_subcommand(1);

    Overrides est_o, sweep_o, alpha_o, run_o, report_o;
    auto* estimate = app.add_subcommand("estimate", "Estimate per-layer directions into bank/");
    add_overrides(estimate, est_o);

    auto* sweep_layer = app.add_subcommand("sweep-layer", "Pick the intervention layer on the validation split");
    add_overrides(sweep_layer, sweep_o);

    auto* sweep_alpha = app.add_subcommand("sweep-alpha", "Pick the intervention strength on the validation split");
    add_overrides(sweep_alpha, alpha_o);

    auto* run = app.add_subcommand("run", "Generate and judge on the test split");
    add_overrides(run, run_o);
    std::string mode = "neutral";
    run->add_option("--mode", mode, "Experiment mode")
        ->check(CLI::IsMember({"neutral", "conflict", "baseline", "alpha_sweep", "alpha-sweep"}));

    auto* report = app.add_subcommand("report", "Summarize run/sweep files into CSV tables");
    add_overrides(report, report_o);
    std::vector<std::string> report_files;
    report->add_option("files", report_files, "Report files (default: everything under the output directory)");

    auto* validate = app.add_subcommand("validate-corpus", "Check prompt files and lint neutral prompts");
    std::vector<std::string> corpus_files;
    std::string corpus_rules;
    validate->add_option("prompts", corpus_files, "Prompt files")->required();
    validate->add_option("--rules", corpus_rules, "Judge rules used for the neutral-prompt lint");

    auto* planted = app.add_subcommand("planted", "Write the planted fixture (model, prompts, rules, config)");
    std::string planted_dir;
    PlantedSpec spec;
    spec.n_class_tokens = 8;
    std::uint64_t planted_seed = 7;
    int n_per_set = 20;
    planted->add_option("dir", planted_dir, "Destination directory")->required();
    planted->add_option("--seed", planted_seed, "Fixture seed");
    planted->add_option("--n", n_per_set, "Prompts per condition");
    planted->add_option("--d-model", spec.d_model);
    planted->add_option("--layers", spec.n_layers);
    planted->add_option("--null-block", spec.null_block);
    planted->add_option("--attenuation", spec.attenuation);
    planted->add_option("--class-margin", spec.class_margin);
    planted->add_option("--default-bias", spec.default_bias);
    planted->add_option("--class-tokens", spec.n_class_tokens);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*estimate) {
            const auto out = cmd_estimate(build_config(est_o));
            json layers = json::array();
            for (const auto& [l, v] : out.bank.directions) layers.push_back(l);
            print_line({{"bank", out.path}, {"layers", layers}, {"n_positive", out.bank.metadata.n_positive},
                        {"n_negative", out.bank.metadata.n_negative}});
        } else if (*sweep_layer) {
            const auto out = cmd_sweep_layer(build_config(sweep_o));
            json per_layer = json::object();
            for (const auto& [l, m] : out.result.per_layer) per_layer[std::to_string(l)] = m;
            print_line({{"sweep", out.path}, {"best_layer", out.result.best_layer}, {"per_layer", per_layer}});
        } else if (*sweep_alpha) {
            const auto out = cmd_sweep_alpha(build_config(alpha_o));
            print_line({{"sweep", out.path},
                        {"selected_alpha", out.result.selected_alpha ? json(*out.result.selected_alpha) : json(nullptr)}});
        } else if (*run) {
            const auto out = cmd_run(build_config(run_o), run_mode_from_string(mode));
            json dists = json::array();
            for (const auto& e : out.report["entries"]) {
                dists.push_back({{"condition", e["condition"]}, {"intervention", e["intervention"]},
                                 {"target_frac", e["distribution"]["target_frac"]}});
            }
            print_line({{"run", out.path}, {"entries", dists}});
        } else if (*report) {
            const auto cfg = build_config(report_o);
            auto files = report_files;
            if (files.empty() && !report_o.config.empty()) files = default_report_files(cfg);
            const std::string dir = report_o.out.empty() && !report_o.config.empty() ? reports_dir(cfg)
                                    : report_o.out.empty()                            ? std::string("reports")
                                                                                      : report_o.out;
            const auto out = cmd_report(files, dir);
            std::cout << out.summary;
        } else if (*validate) {
            std::optional<std::string> rules;
            if (!corpus_rules.empty()) rules = corpus_rules;
            const auto out = cmd_validate_corpus(corpus_files, rules);
            std::cout << out.summary;
        } else if (*planted) {
            const auto out = cmd_planted(planted_dir, spec, planted_seed, n_per_set);
            print_line({{"config", out.config_path}, {"truth", out.truth.to_json()}});
        }
    } catch (const Error& e) {
        std::cerr << json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}
