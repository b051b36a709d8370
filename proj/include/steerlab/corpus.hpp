#pragma once

#include "steerlab/judge.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace steerlab {

enum class Condition { target, opposite, neutral };
enum class Split { validation, test };

std::string_view to_string(Condition c);
Condition condition_from_string(std::string_view s); // throws parse
std::string_view to_string(Split s);
Split split_from_string(std::string_view s); // throws parse

struct PromptRecord {
    std::string id;
    std::string task;
    Condition condition = Condition::neutral;
    std::string text;
    std::optional<Split> split;

    bool operator==(const PromptRecord&) const = default;
    nlohmann::json to_json() const;
};

struct TaskSpec {
    std::string name;
    std::string target_label;
    std::string opposite_label;

    void validate() const; // labels non-empty and distinct
    nlohmann::json to_json() const;
    static TaskSpec from_json(const nlohmann::json& j);
};

// Line-delimited JSON, one {"id", "task", "condition", "text"[, "split"]}
// object per line. Blank lines are skipped. Errors name the 1-based line.
std::vector<PromptRecord> parse_prompts(std::string_view content, const std::string& source = "<memory>");
std::vector<PromptRecord> load_prompts(const std::string& path);
std::string serialize_prompts(std::span<const PromptRecord> records);
void save_prompts(const std::string& path, std::span<const PromptRecord> records);

// Trim both ends and collapse internal whitespace runs to one space.
std::string normalize_text(std::string_view text);

// Drops records whose normalized text was already seen; first occurrence wins.
std::vector<PromptRecord> dedup(std::span<const PromptRecord> records);

struct SplitResult {
    std::vector<PromptRecord> records;
    std::vector<std::string> warnings;
};

// Stratified by (task, condition). Each stratum, in input order, is shuffled
// with Fisher-Yates driven by Rng(seed ^ fnv1a64(task + '\x1f' + condition));
// the first floor(fraction * n) records go to validation and the rest to
// test. A stratum with fewer than 2 records goes entirely to test with a
// warning. Record order in the output matches the input.
SplitResult split(std::span<const PromptRecord> records, std::uint64_t seed, double validation_fraction);

struct LintFinding {
    std::string id;
    std::string task;
    std::string pattern;
    std::string side; // "target" or "opposite"
};

// Neutral prompts of rules.task (all tasks when rules.task is empty) whose text
// matches any judge pattern. Findings are reported, never auto-edited.
std::vector<LintFinding> lint_neutral(std::span<const PromptRecord> records, const JudgeRules& rules);

std::vector<PromptRecord> select(std::span<const PromptRecord> records, std::string_view task, Condition condition,
                                 std::optional<Split> split = std::nullopt);

} // namespace steerlab
