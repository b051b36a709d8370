#pragma once

#include "steerlab/corpus.hpp"
#include "steerlab/direction.hpp"
#include "steerlab/judge.hpp"
#include "steerlab/planted.hpp"
#include "steerlab/runtime.hpp"
#include "steerlab/selection.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace steerlab {

inline constexpr int kReportSchemaVersion = 1;

enum class JudgeKind { local, remote };

struct JudgeSettings {
    JudgeKind kind = JudgeKind::local;
    std::string rules; // path; required for local, optional for remote (degeneracy settings)
    double timeout_seconds = 30.0;
    std::size_t max_in_flight = 4;
};

// Conflict runs pair prompts requesting one side with steering toward the
// other; both ends are spelled out in the config.
struct ConflictSettings {
    Condition prompt_condition = Condition::opposite;
    Condition steer_toward = Condition::target;
};

// A single JSON document. Relative paths resolve against base_dir (the
// directory holding the config file).
struct ExperimentConfig {
    std::string model;
    std::optional<std::string> vocab;
    std::vector<std::string> prompts;
    TaskSpec task;
    int k_last_tokens = 4;
    bool normalize = false;
    bool add_bos = true;
    std::vector<int> layers;
    std::optional<int> layer;    // fixed intervention layer; otherwise the layer sweep's choice
    std::optional<float> alpha;  // fixed strength; otherwise the alpha sweep's choice
    std::vector<float> alpha_grid;
    GenerationParams generation;
    JudgeSettings judge;
    std::uint64_t seed = 0;
    double validation_fraction = 0.5;
    bool dedup = true;
    std::string output_dir = "out";
    std::size_t workers = 1;
    InterventionScope scope = InterventionScope::all;
    double degeneracy_threshold = 0.1;
    Split sweep_split = Split::validation;
    ConflictSettings conflict;
    std::optional<std::string> bank;
    std::string base_dir = ".";

    void validate() const;
    std::string resolve(const std::string& path) const;

    nlohmann::json to_json() const; // paths exactly as written
    static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    static ExperimentConfig load(const std::string& path);

    // hex64(fnv1a64(to_json().dump())), embedded in every output file.
    std::string hash() const;
};

struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string bank_id;
    std::string model_id;
    std::string created_at;

    nlohmann::json to_json() const;
};

// Output locations under config.output_dir.
std::string bank_path(const ExperimentConfig& cfg);
std::string layer_sweep_path(const ExperimentConfig& cfg);
std::string alpha_sweep_path(const ExperimentConfig& cfg);
std::string run_path(const ExperimentConfig& cfg, std::string_view mode);
std::string reports_dir(const ExperimentConfig& cfg);

struct PreparedCorpus {
    std::vector<PromptRecord> records;
    std::vector<std::string> warnings;
};

// Loads every prompt file, de-duplicates when enabled and assigns splits unless
// every record already carries one.
PreparedCorpus prepare_corpus(const ExperimentConfig& cfg);

Model load_config_model(const ExperimentConfig& cfg);
std::unique_ptr<Judge> make_judge(const ExperimentConfig& cfg);

struct EstimateOutcome {
    std::string path;
    DirectionBank bank;
};
EstimateOutcome cmd_estimate(const ExperimentConfig& cfg);

struct SweepOutcome {
    std::string path;
    SweepResult result;
};
SweepOutcome cmd_sweep_layer(const ExperimentConfig& cfg);

struct AlphaSweepOutcome {
    std::string path;
    AlphaSweepResult result;
};
AlphaSweepOutcome cmd_sweep_alpha(const ExperimentConfig& cfg);

enum class RunMode { neutral, conflict, baseline, alpha_sweep };
std::string_view to_string(RunMode mode);
RunMode run_mode_from_string(std::string_view s);

struct RunOutcome {
    std::string path;
    nlohmann::json report;
};
RunOutcome cmd_run(const ExperimentConfig& cfg, RunMode mode);

struct ReportOutcome {
    std::vector<std::string> files;
    std::string summary;
};

// Rebuilds every fraction from the raw verdicts shipped in each file, checks
// them against the stored counts (integrity) and writes distributions.csv plus
// alpha curves: alpha_<task>.csv from test-split runs and
// alpha_<task>_validation.csv from selection sweeps.
ReportOutcome cmd_report(const std::vector<std::string>& report_files, const std::string& out_dir);

struct CorpusCheck {
    std::size_t n_records = 0;
    std::size_t n_after_dedup = 0;
    std::vector<LintFinding> findings;
    std::vector<std::string> warnings;
    std::string summary;
};
CorpusCheck cmd_validate_corpus(const std::vector<std::string>& prompt_files, const std::optional<std::string>& rules_path);

struct PlantedOutcome {
    std::string config_path;
    PlantedTruth truth;
};

// Writes model, vocabulary, prompts, rules, truth and a ready-to-run config
// into `dir`.
PlantedOutcome cmd_planted(const std::string& dir, const PlantedSpec& spec, std::uint64_t seed, int n_per_set);

// Serialized sweep/run payloads, shared with cmd_report.
nlohmann::json batch_entry(std::string_view condition, std::string_view intervention, std::optional<int> layer,
                           float alpha, std::span<const PromptRecord> prompts, const JudgedBatch& batch);

} // namespace steerlab
