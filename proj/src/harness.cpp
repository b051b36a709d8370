#include "steerlab/harness.hpp"

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/hashing.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <sstream>

namespace steerlab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string format_number(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc()) return std::to_string(x);
    return std::string(buf, ptr);
}

json generation_to_json(const GenerationParams& p) {
    return {{"max_new_tokens", p.max_new_tokens},
            {"strategy", to_string(p.strategy)},
            {"temperature", p.temperature},
            {"seed", p.seed},
            {"stop_ids", p.stop_ids}};
}

GenerationParams generation_from_json(const json& j) {
    GenerationParams p;
    p.max_new_tokens = j.value("max_new_tokens", p.max_new_tokens);
    p.strategy = decode_strategy_from_string(j.value("strategy", std::string("greedy")));
    p.temperature = j.value("temperature", p.temperature);
    p.seed = j.value("seed", p.seed);
    p.stop_ids = j.value("stop_ids", p.stop_ids);
    return p;
}

void write_json(const std::string& path, const json& j) {
    write_file_bytes(path, j.dump(2) + "\n");
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_file_bytes(path));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse, path + ": " + e.what());
    }
}

std::string intervention_label(std::optional<int> layer, float alpha) {
    if (!layer) return "none";
    return "L" + std::to_string(*layer) + " a=" + format_number(alpha);
}

std::string bank_identifier(const ExperimentConfig& cfg, const std::string& path) {
    return cfg.task.name + ":" + file_fingerprint(path);
}

Provenance make_provenance(const ExperimentConfig& cfg, const Model& model, const std::string& bank_id) {
    return {cfg.hash(), cfg.seed, bank_id, model.identifier, utc_timestamp()};
}

json header(std::string_view kind, const ExperimentConfig& cfg, const Provenance& prov) {
    return {{"schema_version", kReportSchemaVersion},
            {"kind", kind},
            {"task", cfg.task.to_json()},
            {"provenance", prov.to_json()}};
}

SweepOptions sweep_options(const ExperimentConfig& cfg) {
    SweepOptions o;
    o.layers = cfg.layers;
    o.scope = cfg.scope;
    o.batch.workers = cfg.workers;
    o.batch.add_bos = cfg.add_bos;
    return o;
}

std::vector<PromptRecord> neutral_prompts(const ExperimentConfig& cfg, const PreparedCorpus& corpus, Split split) {
    auto prompts = select(corpus.records, cfg.task.name, Condition::neutral, split);
    if (prompts.empty()) {
        throw Error(ErrorCode::missing_condition, "task '" + cfg.task.name + "' has no neutral prompts in the " +
                                                      std::string(to_string(split)) + " split");
    }
    return prompts;
}

DirectionBank load_config_bank(const ExperimentConfig& cfg, const Model& model, std::string& bank_id) {
    const std::string path = bank_path(cfg);
    if (!fs::exists(path)) throw Error(ErrorCode::io, "direction bank " + path + " not found; run estimate first");
    DirectionBank bank = load_bank(path);
    check_bank_compatible(bank, model);
    bank_id = bank_identifier(cfg, path);
    return bank;
}

int resolve_layer(const ExperimentConfig& cfg) {
    if (cfg.layer) return *cfg.layer;
    const std::string path = layer_sweep_path(cfg);
    if (!fs::exists(path)) {
        throw Error(ErrorCode::invalid_argument, "no intervention layer: set 'layer' or run sweep-layer first");
    }
    const json j = read_json(path);
    if (j.value("schema_version", 0) != kReportSchemaVersion) {
        throw Error(ErrorCode::schema_mismatch, path + ": unsupported schema version");
    }
    return j.at("best_layer").get<int>();
}

float resolve_alpha(const ExperimentConfig& cfg) {
    if (cfg.alpha) return *cfg.alpha;
    const std::string path = alpha_sweep_path(cfg);
    if (fs::exists(path)) {
        const json j = read_json(path);
        if (j.value("schema_version", 0) != kReportSchemaVersion) {
            throw Error(ErrorCode::schema_mismatch, path + ": unsupported schema version");
        }
        if (j.contains("selected_alpha") && j["selected_alpha"].is_number()) return j["selected_alpha"].get<float>();
        throw Error(ErrorCode::invalid_argument, "alpha sweep selected no alpha; set 'alpha' explicitly");
    }
    throw Error(ErrorCode::invalid_argument, "no intervention strength: set 'alpha' or run sweep-alpha first");
}

json alpha_points_json(const AlphaSweepResult& r) {
    json points = json::array();
    for (const auto& p : r.per_alpha) {
        points.push_back({{"alpha", p.alpha},
                          {"target_count", p.counts.target},
                          {"opposite_count", p.counts.opposite},
                          {"neither_count", p.counts.neither},
                          {"degenerate_count", p.counts.degenerate}});
    }
    return points;
}

Condition parse_condition(const json& j, const char* field, Condition fallback) {
    return j.contains(field) ? condition_from_string(j[field].get<std::string>()) : fallback;
}

} // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, "config: " + what); };
    if (model.empty()) fail("'model' is required");
    if (prompts.empty()) fail("'prompts' needs at least one file");
    task.validate();
    if (k_last_tokens < 1) fail("'k_last_tokens' must be at least 1");
    for (float a : alpha_grid) {
        if (!(a >= 0.0f)) fail("alpha grid values must be non-negative");
    }
    if (alpha && !(*alpha >= 0.0f)) fail("'alpha' must be non-negative");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) fail("'validation_fraction' must lie in (0, 1)");
    if (!(degeneracy_threshold >= 0.0 && degeneracy_threshold <= 1.0)) fail("'degeneracy_threshold' must lie in [0, 1]");
    if (generation.max_new_tokens < 1) fail("'max_new_tokens' must be positive");
    if (generation.strategy == DecodeStrategy::temperature && !(generation.temperature > 0.0f)) {
        fail("'temperature' must be positive");
    }
    if (judge.kind == JudgeKind::local && judge.rules.empty()) fail("the local judge needs a rules file");
    if (conflict.prompt_condition == Condition::neutral || conflict.steer_toward == Condition::neutral ||
        conflict.prompt_condition == conflict.steer_toward) {
        fail("conflict runs need prompt_condition and steer_toward to be opposite sides");
    }
}

std::string ExperimentConfig::resolve(const std::string& path) const {
    const fs::path p(path);
    if (p.is_absolute()) return p.string();
    return (fs::path(base_dir) / p).lexically_normal().string();
}

json ExperimentConfig::to_json() const {
    json j = {{"model", model},
              {"vocab", vocab ? json(*vocab) : json(nullptr)},
              {"prompts", prompts},
              {"task", task.to_json()},
              {"k_last_tokens", k_last_tokens},
              {"normalize", normalize},
              {"add_bos", add_bos},
              {"layers", layers},
              {"layer", layer ? json(*layer) : json(nullptr)},
              {"alpha", alpha ? json(*alpha) : json(nullptr)},
              {"alpha_grid", alpha_grid},
              {"generation", generation_to_json(generation)},
              {"judge",
               {{"mode", judge.kind == JudgeKind::local ? "local" : "remote"},
                {"rules", judge.rules},
                {"timeout_seconds", judge.timeout_seconds},
                {"max_in_flight", judge.max_in_flight}}},
              {"seed", seed},
              {"validation_fraction", validation_fraction},
              {"dedup", dedup},
              {"output_dir", output_dir},
              {"workers", workers},
              {"scope", to_string(scope)},
              {"degeneracy_threshold", degeneracy_threshold},
              {"sweep_split", to_string(sweep_split)},
              {"conflict",
               {{"prompt_condition", to_string(conflict.prompt_condition)},
                {"steer_toward", to_string(conflict.steer_toward)}}},
              {"bank", bank ? json(*bank) : json(nullptr)}};
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::string& base_dir) {
    if (!j.is_object()) throw Error(ErrorCode::parse, "config must be a JSON object");
    ExperimentConfig c;
    c.base_dir = base_dir;
    try {
        c.model = j.value("model", "");
        if (j.contains("vocab") && !j["vocab"].is_null()) c.vocab = j["vocab"].get<std::string>();
        if (j.contains("prompts")) {
            if (j["prompts"].is_string()) {
                c.prompts = {j["prompts"].get<std::string>()};
            } else {
                c.prompts = j["prompts"].get<std::vector<std::string>>();
            }
        }
        if (j.contains("task")) c.task = TaskSpec::from_json(j["task"]);
        c.k_last_tokens = j.value("k_last_tokens", c.k_last_tokens);
        c.normalize = j.value("normalize", c.normalize);
        c.add_bos = j.value("add_bos", c.add_bos);
        c.layers = j.value("layers", c.layers);
        if (j.contains("layer") && !j["layer"].is_null()) c.layer = j["layer"].get<int>();
        if (j.contains("alpha") && !j["alpha"].is_null()) c.alpha = j["alpha"].get<float>();
        c.alpha_grid = j.value("alpha_grid", c.alpha_grid);
        if (j.contains("generation")) c.generation = generation_from_json(j["generation"]);
        if (j.contains("judge")) {
            const json& jj = j["judge"];
            const std::string mode = jj.value("mode", "local");
            if (mode == "local") {
                c.judge.kind = JudgeKind::local;
            } else if (mode == "remote") {
                c.judge.kind = JudgeKind::remote;
            } else {
                throw Error(ErrorCode::parse, "unknown judge mode '" + mode + "'");
            }
            c.judge.rules = jj.value("rules", "");
            c.judge.timeout_seconds = jj.value("timeout_seconds", c.judge.timeout_seconds);
            c.judge.max_in_flight = jj.value("max_in_flight", c.judge.max_in_flight);
        }
        c.seed = j.value("seed", c.seed);
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        c.dedup = j.value("dedup", c.dedup);
        c.output_dir = j.value("output_dir", c.output_dir);
        c.workers = j.value("workers", c.workers);
        c.scope = intervention_scope_from_string(j.value("scope", std::string("all")));
        c.degeneracy_threshold = j.value("degeneracy_threshold", c.degeneracy_threshold);
        c.sweep_split = split_from_string(j.value("sweep_split", std::string("validation")));
        if (j.contains("conflict")) {
            c.conflict.prompt_condition = parse_condition(j["conflict"], "prompt_condition", c.conflict.prompt_condition);
            c.conflict.steer_toward = parse_condition(j["conflict"], "steer_toward", c.conflict.steer_toward);
        }
        if (j.contains("bank") && !j["bank"].is_null()) c.bank = j["bank"].get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse, std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    const json j = read_json(path);
    const fs::path parent = fs::path(path).parent_path();
    return from_json(j, parent.empty() ? "." : parent.string());
}

std::string ExperimentConfig::hash() const {
    return hex64(fnv1a64(to_json().dump()));
}

json Provenance::to_json() const {
    return {{"config_hash", config_hash},
            {"seed", seed},
            {"bank_id", bank_id},
            {"model_id", model_id},
            {"created_at", created_at}};
}

std::string bank_path(const ExperimentConfig& cfg) {
    if (cfg.bank) return cfg.resolve(*cfg.bank);
    return (fs::path(cfg.resolve(cfg.output_dir)) / "bank" / (cfg.task.name + ".bank")).string();
}

std::string layer_sweep_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.resolve(cfg.output_dir)) / "sweeps" / ("layer_" + cfg.task.name + ".json")).string();
}

std::string alpha_sweep_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.resolve(cfg.output_dir)) / "sweeps" / ("alpha_" + cfg.task.name + ".json")).string();
}

std::string run_path(const ExperimentConfig& cfg, std::string_view mode) {
    return (fs::path(cfg.resolve(cfg.output_dir)) / "runs" / (std::string(mode) + "_" + cfg.task.name + ".json"))
        .string();
}

std::string reports_dir(const ExperimentConfig& cfg) {
    return (fs::path(cfg.resolve(cfg.output_dir)) / "reports").string();
}

PreparedCorpus prepare_corpus(const ExperimentConfig& cfg) {
    PreparedCorpus out;
    std::vector<PromptRecord> all;
    for (const auto& p : cfg.prompts) {
        auto recs = load_prompts(cfg.resolve(p));
        all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
    }
    if (cfg.dedup) all = dedup(all);
    bool annotated = !all.empty();
    for (const auto& r : all) annotated = annotated && r.split.has_value();
    if (annotated) {
        out.records = std::move(all);
        return out;
    }
    auto s = split(all, cfg.seed, cfg.validation_fraction);
    out.records = std::move(s.records);
    out.warnings = std::move(s.warnings);
    return out;
}

Model load_config_model(const ExperimentConfig& cfg) {
    std::optional<std::string> vocab;
    if (cfg.vocab) vocab = cfg.resolve(*cfg.vocab);
    return load_model(cfg.resolve(cfg.model), vocab);
}

std::unique_ptr<Judge> make_judge(const ExperimentConfig& cfg) {
    if (cfg.judge.kind == JudgeKind::local) {
        return std::make_unique<LocalJudge>(JudgeRules::load(cfg.resolve(cfg.judge.rules)));
    }
    RemoteJudgeConfig rc = RemoteJudgeConfig::from_env();
    rc.timeout_seconds = cfg.judge.timeout_seconds;
    rc.max_in_flight = cfg.judge.max_in_flight;
    DegeneracyConfig deg;
    if (!cfg.judge.rules.empty()) deg = JudgeRules::load(cfg.resolve(cfg.judge.rules)).degeneracy;
    return std::make_unique<RemoteJudge>(rc, cfg.task.name, cfg.task.target_label, cfg.task.opposite_label, deg);
}

json batch_entry(std::string_view condition, std::string_view intervention, std::optional<int> layer, float alpha,
                 std::span<const PromptRecord> prompts, const JudgedBatch& batch) {
    json records = json::array();
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto& g = batch.generations[i];
        records.push_back({{"id", prompts[i].id},
                           {"prompt", prompts[i].text},
                           {"output_ids", g.output_ids},
                           {"output_text", g.output_text},
                           {"finish_reason", to_string(g.finish_reason)},
                           {"verdict", batch.verdicts[i].to_json()}});
    }
    return {{"condition", condition},
            {"intervention", intervention},
            {"layer", layer ? json(*layer) : json(nullptr)},
            {"alpha", alpha},
            {"distribution", batch.distribution.to_json()},
            {"records", records}};
}

EstimateOutcome cmd_estimate(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto corpus = prepare_corpus(cfg);
    const auto pos = select(corpus.records, cfg.task.name, Condition::target, Split::validation);
    const auto neg = select(corpus.records, cfg.task.name, Condition::opposite, Split::validation);
    if (pos.empty() || neg.empty()) throw Error(ErrorCode::empty_prompt_set, "empty prompt set");
    std::vector<std::string> pos_text, neg_text;
    for (const auto& r : pos) pos_text.push_back(r.text);
    for (const auto& r : neg) neg_text.push_back(r.text);

    const Model model = load_config_model(cfg);
    EstimatorConfig ec;
    ec.k_last_tokens = cfg.k_last_tokens;
    ec.layers = cfg.layers;
    ec.normalize = cfg.normalize;
    ec.add_bos = cfg.add_bos;
    ec.workers = cfg.workers;
    BankMetadata meta;
    meta.task = cfg.task.name;
    meta.target_label = cfg.task.target_label;
    meta.opposite_label = cfg.task.opposite_label;
    meta.model_id = model.identifier;
    meta.extra = {{"config_hash", cfg.hash()}, {"seed", cfg.seed}, {"schema_version", kReportSchemaVersion}};

    EstimateOutcome out;
    out.bank = estimate_directions(model, pos_text, neg_text, ec, meta);
    out.path = bank_path(cfg);
    save_bank(out.bank, out.path);
    return out;
}

SweepOutcome cmd_sweep_layer(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!cfg.alpha) throw Error(ErrorCode::invalid_argument, "the layer sweep needs an explicit 'alpha'");
    const Model model = load_config_model(cfg);
    std::string bank_id;
    const DirectionBank bank = load_config_bank(cfg, model, bank_id);
    const auto corpus = prepare_corpus(cfg);
    const auto prompts = neutral_prompts(cfg, corpus, cfg.sweep_split);
    const auto judge = make_judge(cfg);

    SweepOutcome out;
    out.result = layer_sweep(model, bank, prompts, *cfg.alpha, cfg.generation, *judge, sweep_options(cfg));

    json doc = header("layer_sweep", cfg, make_provenance(cfg, model, bank_id));
    json per_layer = json::object();
    json entries = json::array();
    for (const auto& [layer, count] : out.result.per_layer) {
        per_layer[std::to_string(layer)] = count;
        entries.push_back(batch_entry("neutral", intervention_label(layer, *cfg.alpha), layer, *cfg.alpha, prompts,
                                      out.result.batches.at(layer)));
    }
    doc["alpha"] = *cfg.alpha;
    doc["n_prompts"] = out.result.n_prompts;
    doc["per_layer"] = per_layer;
    doc["best_layer"] = out.result.best_layer;
    doc["entries"] = entries;
    out.path = layer_sweep_path(cfg);
    write_json(out.path, doc);
    return out;
}

AlphaSweepOutcome cmd_sweep_alpha(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.alpha_grid.empty()) throw Error(ErrorCode::invalid_argument, "empty alpha grid");
    const Model model = load_config_model(cfg);
    std::string bank_id;
    const DirectionBank bank = load_config_bank(cfg, model, bank_id);
    const int layer = resolve_layer(cfg);
    const auto corpus = prepare_corpus(cfg);
    const auto prompts = neutral_prompts(cfg, corpus, cfg.sweep_split);
    require_validation_neutral(prompts);
    const auto judge = make_judge(cfg);

    AlphaSweepOutcome out;
    out.result = alpha_sweep(model, bank.at(layer), layer, prompts, cfg.alpha_grid, cfg.generation, *judge,
                             cfg.degeneracy_threshold, sweep_options(cfg));

    json doc = header("alpha_sweep", cfg, make_provenance(cfg, model, bank_id));
    json entries = json::array();
    for (const auto& p : out.result.per_alpha) {
        entries.push_back(batch_entry("neutral", intervention_label(layer, p.alpha), layer, p.alpha, prompts, p.batch));
    }
    doc["layer"] = layer;
    doc["n_prompts"] = out.result.n_prompts;
    doc["degeneracy_threshold"] = cfg.degeneracy_threshold;
    doc["points"] = alpha_points_json(out.result);
    doc["selected_alpha"] = out.result.selected_alpha ? json(*out.result.selected_alpha) : json(nullptr);
    doc["entries"] = entries;
    out.path = alpha_sweep_path(cfg);
    write_json(out.path, doc);
    return out;
}

std::string_view to_string(RunMode mode) {
    switch (mode) {
        case RunMode::neutral: return "neutral";
        case RunMode::conflict: return "conflict";
        case RunMode::baseline: return "baseline";
        case RunMode::alpha_sweep: return "alpha_sweep";
    }
    return "baseline";
}

RunMode run_mode_from_string(std::string_view s) {
    if (s == "neutral") return RunMode::neutral;
    if (s == "conflict") return RunMode::conflict;
    if (s == "baseline") return RunMode::baseline;
    if (s == "alpha_sweep" || s == "alpha-sweep") return RunMode::alpha_sweep;
    throw Error(ErrorCode::invalid_argument, "unknown run mode '" + std::string(s) + "'");
}

RunOutcome cmd_run(const ExperimentConfig& cfg, RunMode mode) {
    cfg.validate();
    const Model model = load_config_model(cfg);
    const auto corpus = prepare_corpus(cfg);
    const auto judge = make_judge(cfg);
    const BatchOptions batch_opts{cfg.workers, cfg.add_bos};

    std::string bank_id;
    std::optional<DirectionBank> bank;
    if (mode != RunMode::baseline) bank = load_config_bank(cfg, model, bank_id);

    json doc = header("run", cfg, make_provenance(cfg, model, bank_id));
    doc["mode"] = to_string(mode);
    json entries = json::array();

    switch (mode) {
        case RunMode::baseline: {
            const auto prompts = neutral_prompts(cfg, corpus, Split::test);
            const auto batch = generate_and_judge(model, prompts, std::nullopt, cfg.generation, *judge, batch_opts);
            entries.push_back(batch_entry("neutral", "none", std::nullopt, 0.0f, prompts, batch));
            break;
        }
        case RunMode::neutral: {
            const int layer = resolve_layer(cfg);
            const float alpha = resolve_alpha(cfg);
            const auto prompts = neutral_prompts(cfg, corpus, Split::test);
            const auto spec = make_intervention(*bank, model, layer, alpha, cfg.scope);
            const auto batch = generate_and_judge(model, prompts, spec, cfg.generation, *judge, batch_opts);
            entries.push_back(batch_entry("neutral", intervention_label(layer, alpha), layer, alpha, prompts, batch));
            doc["layer"] = layer;
            doc["alpha"] = alpha;
            break;
        }
        case RunMode::conflict: {
            const int layer = resolve_layer(cfg);
            const float alpha = resolve_alpha(cfg);
            const auto prompts = select(corpus.records, cfg.task.name, cfg.conflict.prompt_condition, Split::test);
            if (prompts.empty()) {
                throw Error(ErrorCode::missing_condition,
                            "task '" + cfg.task.name + "' has no " +
                                std::string(to_string(cfg.conflict.prompt_condition)) + " prompts in the test split");
            }
            auto spec = make_intervention(*bank, model, layer, alpha, cfg.scope);
            if (cfg.conflict.steer_toward == Condition::opposite) {
                for (auto& x : spec.vector) x = -x;
            }
            const std::string cond(to_string(cfg.conflict.prompt_condition));
            const auto plain = generate_and_judge(model, prompts, std::nullopt, cfg.generation, *judge, batch_opts);
            entries.push_back(batch_entry(cond, "none", std::nullopt, 0.0f, prompts, plain));
            const auto steered = generate_and_judge(model, prompts, spec, cfg.generation, *judge, batch_opts);
            entries.push_back(batch_entry(cond, intervention_label(layer, alpha) + " toward " +
                                                    std::string(to_string(cfg.conflict.steer_toward)),
                                          layer, alpha, prompts, steered));
            doc["layer"] = layer;
            doc["alpha"] = alpha;
            doc["conflict"] = {{"prompt_condition", cond}, {"steer_toward", to_string(cfg.conflict.steer_toward)}};
            break;
        }
        case RunMode::alpha_sweep: {
            if (cfg.alpha_grid.empty()) throw Error(ErrorCode::invalid_argument, "empty alpha grid");
            const int layer = resolve_layer(cfg);
            const auto prompts = neutral_prompts(cfg, corpus, Split::test);
            const auto r = alpha_sweep(model, bank->at(layer), layer, prompts, cfg.alpha_grid, cfg.generation, *judge,
                                       cfg.degeneracy_threshold, sweep_options(cfg));
            for (const auto& p : r.per_alpha) {
                entries.push_back(batch_entry("neutral", intervention_label(layer, p.alpha), layer, p.alpha, prompts,
                                              p.batch));
            }
            doc["layer"] = layer;
            doc["degeneracy_threshold"] = cfg.degeneracy_threshold;
            doc["points"] = alpha_points_json(r);
            doc["selected_alpha"] = r.selected_alpha ? json(*r.selected_alpha) : json(nullptr);
            break;
        }
    }
    doc["entries"] = entries;

    RunOutcome out;
    out.path = run_path(cfg, to_string(mode));
    out.report = doc;
    write_json(out.path, doc);
    return out;
}

ReportOutcome cmd_report(const std::vector<std::string>& report_files, const std::string& out_dir) {
    std::string dist_csv = "task,condition,intervention,target_frac,opposite_frac,neither_frac,degenerate_frac\n";
    std::map<std::string, std::string> alpha_csv;
    std::ostringstream summary;

    for (const auto& path : report_files) {
        const json doc = read_json(path);
        if (!doc.is_object() || !doc.contains("schema_version") || !doc["schema_version"].is_number_integer() ||
            doc["schema_version"].get<int>() != kReportSchemaVersion) {
            throw Error(ErrorCode::schema_mismatch, path + ": expected schema_version " +
                                                        std::to_string(kReportSchemaVersion));
        }
        try {
            const std::string kind = doc.at("kind").get<std::string>();
            const std::string task = doc.at("task").at("name").get<std::string>();
            const bool is_alpha = kind == "alpha_sweep" || (kind == "run" && doc.value("mode", "") == "alpha_sweep");
            if (kind != "run" && kind != "alpha_sweep" && kind != "layer_sweep") {
                throw Error(ErrorCode::schema_mismatch, path + ": unknown report kind '" + kind + "'");
            }
            for (const auto& entry : doc.at("entries")) {
                std::vector<Verdict> verdicts;
                for (const auto& rec : entry.at("records")) verdicts.push_back(Verdict::from_json(rec.at("verdict")));
                const Distribution d = aggregate(verdicts);
                const json& stored = entry.at("distribution");
                const bool consistent = stored.at("n").get<std::size_t>() == d.n &&
                                        stored.at("target").get<std::size_t>() == d.target &&
                                        stored.at("opposite").get<std::size_t>() == d.opposite &&
                                        stored.at("neither").get<std::size_t>() == d.neither &&
                                        stored.at("degenerate").get<std::size_t>() == d.degenerate;
                if (!consistent) {
                    throw Error(ErrorCode::integrity, path + ": stored distribution disagrees with the raw verdicts");
                }
                const std::string condition = entry.at("condition").get<std::string>();
                const std::string intervention = entry.at("intervention").get<std::string>();
                if (is_alpha) {
                    auto& csv = alpha_csv[kind == "alpha_sweep" ? task + "_validation" : task];
                    if (csv.empty()) csv = "alpha,target_frac,degenerate_frac\n";
                    csv += format_number(entry.at("alpha").get<double>()) + "," + format_number(d.target_frac()) +
                           "," + format_number(d.degenerate_frac()) + "\n";
                } else if (kind == "run") {
                    dist_csv += task + "," + condition + "," + intervention + "," + format_number(d.target_frac()) +
                                "," + format_number(d.opposite_frac()) + "," + format_number(d.neither_frac()) + "," +
                                format_number(d.degenerate_frac()) + "\n";
                }
                summary << task << " | " << condition << " | " << intervention << " | n=" << d.n
                        << " target=" << format_number(d.target_frac())
                        << " opposite=" << format_number(d.opposite_frac())
                        << " neither=" << format_number(d.neither_frac())
                        << " degenerate=" << format_number(d.degenerate_frac()) << "\n";
            }
        } catch (const json::exception& e) {
            throw Error(ErrorCode::parse, path + ": " + e.what());
        }
    }

    ReportOutcome out;
    const fs::path dir(out_dir);
    const std::string dist_path = (dir / "distributions.csv").string();
    write_file_bytes(dist_path, dist_csv);
    out.files.push_back(dist_path);
    for (const auto& [task, csv] : alpha_csv) {
        const std::string p = (dir / ("alpha_" + task + ".csv")).string();
        write_file_bytes(p, csv);
        out.files.push_back(p);
    }
    out.summary = summary.str();
    if (out.summary.empty()) out.summary = "no report entries\n";
    const std::string summary_path = (dir / "summary.txt").string();
    write_file_bytes(summary_path, out.summary);
    out.files.push_back(summary_path);
    return out;
}

CorpusCheck cmd_validate_corpus(const std::vector<std::string>& prompt_files,
                                const std::optional<std::string>& rules_path) {
    CorpusCheck out;
    std::vector<PromptRecord> all;
    for (const auto& p : prompt_files) {
        auto recs = load_prompts(p);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    out.n_records = all.size();
    const auto unique = dedup(all);
    out.n_after_dedup = unique.size();
    if (rules_path) out.findings = lint_neutral(unique, JudgeRules::load(*rules_path));

    std::map<std::pair<std::string, Condition>, std::size_t> strata;
    for (const auto& r : unique) ++strata[{r.task, r.condition}];
    for (const auto& [key, n] : strata) {
        if (n < 2) {
            out.warnings.push_back("stratum " + key.first + "/" + std::string(to_string(key.second)) + " has " +
                                   std::to_string(n) + " record(s)");
        }
    }

    std::ostringstream s;
    s << out.n_records << " records, " << out.n_after_dedup << " after de-duplication\n";
    for (const auto& [key, n] : strata) s << "  " << key.first << "/" << to_string(key.second) << ": " << n << "\n";
    for (const auto& w : out.warnings) s << "warning: " << w << "\n";
    for (const auto& f : out.findings) {
        s << "lint: neutral prompt " << f.id << " (" << f.task << ") matches " << f.side << " pattern '" << f.pattern
          << "'\n";
    }
    if (rules_path) s << out.findings.size() << " lint finding(s)\n";
    out.summary = s.str();
    return out;
}

PlantedOutcome cmd_planted(const std::string& dir, const PlantedSpec& spec, std::uint64_t seed, int n_per_set) {
    const fs::path root(dir);
    auto fixture = build_planted_model(spec, seed);
    save_model(fixture.model, (root / "model.steer").string());

    const auto prompts = make_planted_prompts(spec, n_per_set, seed + 1);
    // Ship the prompts pre-split, with each negative following its matched
    // positive, so the estimation halves stay paired.
    auto records = split(planted_records(prompts), seed, 0.5).records;
    const auto n = prompts.positives.size();
    for (std::size_t i = 0; i < n; ++i) records[n + i].split = records[i].split;
    save_prompts((root / "prompts.jsonl").string(), records);

    const auto rules = planted_rules(spec);
    write_json((root / "rules.json").string(), rules.to_json());
    write_json((root / "truth.json").string(), fixture.truth.to_json());

    // The bank is stored unit-normalized so that injected strength is
    // comparable across layers; 2x the last layer's threshold then separates
    // the last layer from all others.
    const double thr = fixture.truth.alpha_threshold(spec.n_layers);
    ExperimentConfig cfg;
    cfg.model = "model.steer";
    cfg.prompts = {"prompts.jsonl"};
    cfg.task = planted_task();
    cfg.normalize = true;
    cfg.alpha = static_cast<float>(2.0 * thr);
    for (double f : {0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.5}) cfg.alpha_grid.push_back(static_cast<float>(f * thr));
    cfg.judge.rules = "rules.json";
    cfg.generation.max_new_tokens = planted_generation_length(spec, rules.degeneracy.ngram);
    cfg.seed = seed;
    cfg.output_dir = "out";
    const std::string config_path = (root / "config.json").string();
    write_json(config_path, cfg.to_json());
    return {config_path, std::move(fixture.truth)};
}

} // namespace steerlab
