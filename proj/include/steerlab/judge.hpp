#pragma once

#include "steerlab/runtime.hpp"

#include <json.hpp>

#include <memory>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steerlab {

enum class Label { target, opposite, neither };

std::string_view to_string(Label label);
Label label_from_string(std::string_view s);

// A literal (substring / whole-word equality) or ECMAScript regular expression.
class Pattern {
public:
    enum class Kind { literal, regex };

    static Pattern literal(std::string text);
    static Pattern regex(std::string source); // throws invalid_rules on bad syntax

    Kind kind() const { return kind_; }
    const std::string& text() const { return text_; }

    bool found_in(std::string_view text) const;   // anywhere in text
    bool matches_word(std::string_view word) const; // the whole word

    nlohmann::json to_json() const;

private:
    Kind kind_ = Kind::literal;
    std::string text_;
    std::shared_ptr<const std::regex> compiled_;
};

// patterns    : a side "hits" when any of its patterns occurs in the text.
// token_class : the text is split on whitespace; a side hits when the share of
//               words matching its patterns is at least min_token_class_fraction.
enum class JudgeMode { patterns, token_class };

struct DegeneracyConfig {
    int ngram = 4;
    double threshold = 0.5; // degenerate when repetition_score > threshold
};

struct JudgeRules {
    std::string task;
    JudgeMode mode = JudgeMode::patterns;
    std::vector<Pattern> target_patterns;
    std::vector<Pattern> opposite_patterns;
    double min_token_class_fraction = 0.5;
    DegeneracyConfig degeneracy;

    // Validates fraction range, ngram size and literal disjointness.
    void validate() const;
    JudgeRules swapped() const;

    static JudgeRules from_json(const nlohmann::json& j);
    static JudgeRules load(const std::string& path);
    nlohmann::json to_json() const;
};

struct Verdict {
    Label label = Label::neither;
    bool degenerate = false;
    double repetition_score = 0.0;
    bool truncated = false;

    bool operator==(const Verdict&) const = default;
    nlohmann::json to_json() const;
    static Verdict from_json(const nlohmann::json& j);
};

// Target iff only the target side hits, opposite iff only the opposite side
// hits, neither otherwise. truncated marks empty (whitespace-only) output.
Verdict judge_local(std::string_view text, const JudgeRules& rules);

// 1 - distinct n-grams / n-grams; 0 for sequences shorter than n.
double repetition_score(std::span<const TokenId> ids, int n);

// Fills repetition_score and degenerate from the generated ids.
void score_degeneracy(Verdict& verdict, std::span<const TokenId> ids, const DegeneracyConfig& config);

struct Distribution {
    std::size_t n = 0;
    std::size_t target = 0;
    std::size_t opposite = 0;
    std::size_t neither = 0;
    std::size_t degenerate = 0;

    double fraction(std::size_t count) const { return n == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(n); }
    double target_frac() const { return fraction(target); }
    double opposite_frac() const { return fraction(opposite); }
    double neither_frac() const { return fraction(neither); }
    double degenerate_frac() const { return fraction(degenerate); }

    bool operator==(const Distribution&) const = default;
    nlohmann::json to_json() const;
};

Distribution aggregate(std::span<const Verdict> verdicts);

// Pluggable labeller for generations.
class Judge {
public:
    virtual ~Judge() = default;
    virtual Verdict judge(const GenerationRecord& record) const = 0;
    virtual std::vector<Verdict> judge_batch(std::span<const GenerationRecord> records) const;
};

class LocalJudge final : public Judge {
public:
    explicit LocalJudge(JudgeRules rules);
    Verdict judge(const GenerationRecord& record) const override;
    const JudgeRules& rules() const { return rules_; }

private:
    JudgeRules rules_;
};

// Endpoint and credential normally come from STEERLAB_JUDGE_URL and
// STEERLAB_JUDGE_TOKEN. Only plain http:// endpoints are supported.
struct RemoteJudgeConfig {
    std::string url;
    std::string token;
    double timeout_seconds = 30.0;
    std::size_t max_in_flight = 4;

    static RemoteJudgeConfig from_env();
};

// POSTs {task, target, opposite, text} as JSON and expects
// {"label": "target" | "opposite" | "neither"}. Failures raise
// remote_unreachable, remote_timeout or remote_protocol; they never map to a
// silent "neither".
Verdict judge_remote(std::string_view text, std::string_view task, std::string_view target,
                     std::string_view opposite, const RemoteJudgeConfig& config);

class RemoteJudge final : public Judge {
public:
    RemoteJudge(RemoteJudgeConfig config, std::string task, std::string target, std::string opposite,
                DegeneracyConfig degeneracy = {});
    Verdict judge(const GenerationRecord& record) const override;
    // At most config.max_in_flight requests are outstanding at once.
    std::vector<Verdict> judge_batch(std::span<const GenerationRecord> records) const override;

private:
    RemoteJudgeConfig config_;
    std::string task_, target_, opposite_;
    DegeneracyConfig degeneracy_;
};

} // namespace steerlab
