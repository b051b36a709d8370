#include "steerlab/judge.hpp"

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"

#include <set>

namespace steerlab {

using nlohmann::json;

std::string_view to_string(Label label) {
    switch (label) {
        case Label::target: return "target";
        case Label::opposite: return "opposite";
        case Label::neither: return "neither";
    }
    return "neither";
}

Label label_from_string(std::string_view s) {
    if (s == "target") return Label::target;
    if (s == "opposite") return Label::opposite;
    if (s == "neither") return Label::neither;
    throw Error(ErrorCode::parse, "unknown verdict label '" + std::string(s) + "'");
}

Pattern Pattern::literal(std::string text) {
    Pattern p;
    p.kind_ = Kind::literal;
    p.text_ = std::move(text);
    return p;
}

Pattern Pattern::regex(std::string source) {
    Pattern p;
    p.kind_ = Kind::regex;
    try {
        p.compiled_ = std::make_shared<const std::regex>(source, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw Error(ErrorCode::invalid_rules, "invalid regular expression '" + source + "': " + e.what());
    }
    p.text_ = std::move(source);
    return p;
}

bool Pattern::found_in(std::string_view text) const {
    if (kind_ == Kind::literal) return !text_.empty() && text.find(text_) != std::string_view::npos;
    return std::regex_search(text.begin(), text.end(), *compiled_);
}

bool Pattern::matches_word(std::string_view word) const {
    if (kind_ == Kind::literal) return word == text_;
    return std::regex_match(word.begin(), word.end(), *compiled_);
}

json Pattern::to_json() const {
    return {{kind_ == Kind::literal ? "literal" : "regex", text_}};
}

namespace {

Pattern pattern_from_json(const json& j) {
    if (j.is_string()) return Pattern::literal(j.get<std::string>());
    if (j.is_object() && j.size() == 1) {
        if (j.contains("literal") && j["literal"].is_string()) return Pattern::literal(j["literal"].get<std::string>());
        if (j.contains("regex") && j["regex"].is_string()) return Pattern::regex(j["regex"].get<std::string>());
    }
    throw Error(ErrorCode::invalid_rules, "pattern must be a string, {\"literal\": ...} or {\"regex\": ...}");
}

std::vector<std::string_view> split_words(std::string_view text) {
    std::vector<std::string_view> words;
    std::size_t i = 0;
    auto is_space = [](char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) words.push_back(text.substr(start, i - start));
    }
    return words;
}

bool any_found(const std::vector<Pattern>& patterns, std::string_view text) {
    for (const auto& p : patterns) {
        if (p.found_in(text)) return true;
    }
    return false;
}

bool any_word_match(const std::vector<Pattern>& patterns, std::string_view word) {
    for (const auto& p : patterns) {
        if (p.matches_word(word)) return true;
    }
    return false;
}

} // namespace

void JudgeRules::validate() const {
    if (!(min_token_class_fraction >= 0.0 && min_token_class_fraction <= 1.0)) {
        throw Error(ErrorCode::invalid_rules, "min_token_class_fraction must lie in [0, 1]");
    }
    if (degeneracy.ngram < 1) throw Error(ErrorCode::invalid_rules, "repetition n-gram size must be at least 1");
    if (!(degeneracy.threshold >= 0.0 && degeneracy.threshold <= 1.0)) {
        throw Error(ErrorCode::invalid_rules, "degeneracy threshold must lie in [0, 1]");
    }
    for (const auto& t : target_patterns) {
        for (const auto& o : opposite_patterns) {
            if (t.kind() == o.kind() && t.text() == o.text()) {
                throw Error(ErrorCode::invalid_rules, "pattern '" + t.text() + "' appears on both sides");
            }
        }
    }
}

JudgeRules JudgeRules::swapped() const {
    JudgeRules r = *this;
    std::swap(r.target_patterns, r.opposite_patterns);
    return r;
}

JudgeRules JudgeRules::from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::invalid_rules, "rules must be a JSON object");
    JudgeRules r;
    try {
        r.task = j.value("task", "");
        const std::string mode = j.value("mode", "patterns");
        if (mode == "patterns") {
            r.mode = JudgeMode::patterns;
        } else if (mode == "token_class") {
            r.mode = JudgeMode::token_class;
        } else {
            throw Error(ErrorCode::invalid_rules, "unknown judge mode '" + mode + "'");
        }
        for (const auto& p : j.at("target")) r.target_patterns.push_back(pattern_from_json(p));
        for (const auto& p : j.at("opposite")) r.opposite_patterns.push_back(pattern_from_json(p));
        r.min_token_class_fraction = j.value("min_token_class_fraction", 0.5);
        r.degeneracy.ngram = j.value("repetition_n", 4);
        r.degeneracy.threshold = j.value("degeneracy_threshold", 0.5);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_rules, std::string("rules: ") + e.what());
    }
    r.validate();
    return r;
}

JudgeRules JudgeRules::load(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file_bytes(path));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::invalid_rules, path + ": " + e.what());
    }
    return from_json(j);
}

json JudgeRules::to_json() const {
    json target = json::array();
    json opposite = json::array();
    for (const auto& p : target_patterns) target.push_back(p.to_json());
    for (const auto& p : opposite_patterns) opposite.push_back(p.to_json());
    return {{"task", task},
            {"mode", mode == JudgeMode::patterns ? "patterns" : "token_class"},
            {"target", target},
            {"opposite", opposite},
            {"min_token_class_fraction", min_token_class_fraction},
            {"repetition_n", degeneracy.ngram},
            {"degeneracy_threshold", degeneracy.threshold}};
}

json Verdict::to_json() const {
    return {{"label", to_string(label)},
            {"degenerate", degenerate},
            {"repetition_score", repetition_score},
            {"truncated", truncated}};
}

Verdict Verdict::from_json(const json& j) {
    Verdict v;
    try {
        v.label = label_from_string(j.at("label").get<std::string>());
        v.degenerate = j.at("degenerate").get<bool>();
        v.repetition_score = j.at("repetition_score").get<double>();
        v.truncated = j.at("truncated").get<bool>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse, std::string("verdict: ") + e.what());
    }
    return v;
}

Verdict judge_local(std::string_view text, const JudgeRules& rules) {
    Verdict v;
    const auto words = split_words(text);
    v.truncated = words.empty();

    bool target_hit = false;
    bool opposite_hit = false;
    if (rules.mode == JudgeMode::patterns) {
        target_hit = any_found(rules.target_patterns, text);
        opposite_hit = any_found(rules.opposite_patterns, text);
    } else if (!words.empty()) {
        std::size_t n_target = 0;
        std::size_t n_opposite = 0;
        for (auto w : words) {
            if (any_word_match(rules.target_patterns, w)) ++n_target;
            if (any_word_match(rules.opposite_patterns, w)) ++n_opposite;
        }
        const double total = static_cast<double>(words.size());
        target_hit = n_target > 0 && static_cast<double>(n_target) / total >= rules.min_token_class_fraction;
        opposite_hit = n_opposite > 0 && static_cast<double>(n_opposite) / total >= rules.min_token_class_fraction;
    }

    if (target_hit && !opposite_hit) {
        v.label = Label::target;
    } else if (opposite_hit && !target_hit) {
        v.label = Label::opposite;
    }
    return v;
}

double repetition_score(std::span<const TokenId> ids, int n) {
    if (n < 1) throw Error(ErrorCode::invalid_argument, "n-gram size must be at least 1");
    const auto un = static_cast<std::size_t>(n);
    if (ids.size() < un) return 0.0;
    const std::size_t total = ids.size() - un + 1;
    std::set<std::vector<TokenId>> distinct;
    for (std::size_t i = 0; i < total; ++i) distinct.emplace(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                                             ids.begin() + static_cast<std::ptrdiff_t>(i + un));
    return 1.0 - static_cast<double>(distinct.size()) / static_cast<double>(total);
}

void score_degeneracy(Verdict& verdict, std::span<const TokenId> ids, const DegeneracyConfig& config) {
    verdict.repetition_score = repetition_score(ids, config.ngram);
    verdict.degenerate = verdict.repetition_score > config.threshold;
}

json Distribution::to_json() const {
    return {{"n", n},
            {"target", target},
            {"opposite", opposite},
            {"neither", neither},
            {"degenerate", degenerate},
            {"target_frac", target_frac()},
            {"opposite_frac", opposite_frac()},
            {"neither_frac", neither_frac()},
            {"degenerate_frac", degenerate_frac()}};
}

Distribution aggregate(std::span<const Verdict> verdicts) {
    Distribution d;
    d.n = verdicts.size();
    for (const auto& v : verdicts) {
        switch (v.label) {
            case Label::target: ++d.target; break;
            case Label::opposite: ++d.opposite; break;
            case Label::neither: ++d.neither; break;
        }
        if (v.degenerate) ++d.degenerate;
    }
    return d;
}

std::vector<Verdict> Judge::judge_batch(std::span<const GenerationRecord> records) const {
    std::vector<Verdict> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(judge(r));
    return out;
}

LocalJudge::LocalJudge(JudgeRules rules) : rules_(std::move(rules)) {
    rules_.validate();
}

Verdict LocalJudge::judge(const GenerationRecord& record) const {
    Verdict v = judge_local(record.output_text, rules_);
    score_degeneracy(v, record.output_ids, rules_.degeneracy);
    return v;
}

} // namespace steerlab
