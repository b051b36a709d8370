#include "steerlab/corpus.hpp"

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/hashing.hpp"
#include "steerlab/random.hpp"

#include <cmath>
#include <map>
#include <unordered_set>

namespace steerlab {

using nlohmann::json;

std::string_view to_string(Condition c) {
    switch (c) {
        case Condition::target: return "target";
        case Condition::opposite: return "opposite";
        case Condition::neutral: return "neutral";
    }
    return "neutral";
}

Condition condition_from_string(std::string_view s) {
    if (s == "target") return Condition::target;
    if (s == "opposite") return Condition::opposite;
    if (s == "neutral") return Condition::neutral;
    throw Error(ErrorCode::parse, "unknown condition '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
    return s == Split::validation ? "validation" : "test";
}

Split split_from_string(std::string_view s) {
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw Error(ErrorCode::parse, "unknown split '" + std::string(s) + "'");
}

json PromptRecord::to_json() const {
    json j = {{"id", id}, {"task", task}, {"condition", to_string(condition)}, {"text", text}};
    if (split) j["split"] = to_string(*split);
    return j;
}

void TaskSpec::validate() const {
    if (name.empty()) throw Error(ErrorCode::invalid_argument, "task name is empty");
    if (target_label.empty() || opposite_label.empty()) {
        throw Error(ErrorCode::invalid_argument, "task '" + name + "' needs non-empty target and opposite labels");
    }
    if (target_label == opposite_label) {
        throw Error(ErrorCode::invalid_argument, "task '" + name + "' has identical target and opposite labels");
    }
}

json TaskSpec::to_json() const {
    return {{"name", name}, {"target_label", target_label}, {"opposite_label", opposite_label}};
}

TaskSpec TaskSpec::from_json(const json& j) {
    TaskSpec t;
    try {
        t.name = j.at("name").get<std::string>();
        t.target_label = j.at("target_label").get<std::string>();
        t.opposite_label = j.at("opposite_label").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse, std::string("task: ") + e.what());
    }
    t.validate();
    return t;
}

std::string normalize_text(std::string_view text) {
    auto is_space = [](char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; };
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

std::vector<PromptRecord> parse_prompts(std::string_view content, const std::string& source) {
    std::vector<PromptRecord> records;
    std::unordered_set<std::string> ids;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        const auto nl = content.find('\n', pos);
        const auto end = nl == std::string_view::npos ? content.size() : nl;
        std::string_view line = content.substr(pos, end - pos);
        ++line_no;
        pos = end + 1;
        if (normalize_text(line).empty()) {
            if (nl == std::string_view::npos) break;
            continue;
        }
        const std::string where = source + ":" + std::to_string(line_no);
        PromptRecord r;
        try {
            const json j = json::parse(line);
            if (!j.is_object()) throw Error(ErrorCode::parse, "record is not an object");
            r.id = j.at("id").get<std::string>();
            r.task = j.at("task").get<std::string>();
            r.condition = condition_from_string(j.at("condition").get<std::string>());
            r.text = j.at("text").get<std::string>();
            if (j.contains("split") && !j["split"].is_null()) r.split = split_from_string(j["split"].get<std::string>());
        } catch (const json::exception& e) {
            throw Error(ErrorCode::parse, where + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorCode::parse, where + ": " + e.what());
        }
        if (r.id.empty()) throw Error(ErrorCode::parse, where + ": empty id");
        if (normalize_text(r.text).empty()) throw Error(ErrorCode::parse, where + ": empty text");
        if (!ids.insert(r.id).second) {
            throw Error(ErrorCode::duplicate_id, where + ": duplicate id '" + r.id + "'");
        }
        records.push_back(std::move(r));
        if (nl == std::string_view::npos) break;
    }
    return records;
}

std::vector<PromptRecord> load_prompts(const std::string& path) {
    return parse_prompts(read_file_bytes(path), path);
}

std::string serialize_prompts(std::span<const PromptRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += r.to_json().dump();
        out += '\n';
    }
    return out;
}

void save_prompts(const std::string& path, std::span<const PromptRecord> records) {
    write_file_bytes(path, serialize_prompts(records));
}

std::vector<PromptRecord> dedup(std::span<const PromptRecord> records) {
    std::vector<PromptRecord> out;
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
        if (seen.insert(normalize_text(r.text)).second) out.push_back(r);
    }
    return out;
}

SplitResult split(std::span<const PromptRecord> records, std::uint64_t seed, double validation_fraction) {
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw Error(ErrorCode::invalid_argument, "validation fraction must lie strictly between 0 and 1");
    }
    SplitResult result;
    result.records.assign(records.begin(), records.end());

    std::map<std::pair<std::string, Condition>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < records.size(); ++i) {
        strata[{records[i].task, records[i].condition}].push_back(i);
    }
    for (auto& [key, members] : strata) {
        const auto& [task, condition] = key;
        if (members.size() < 2) {
            result.warnings.push_back("stratum " + task + "/" + std::string(to_string(condition)) + " has " +
                                      std::to_string(members.size()) + " record(s); assigned to test");
            for (auto i : members) result.records[i].split = Split::test;
            continue;
        }
        const std::string label = task + '\x1f' + std::string(to_string(condition));
        Rng rng(seed ^ fnv1a64(label));
        for (std::size_t i = members.size() - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_index(i + 1));
            std::swap(members[i], members[j]);
        }
        const auto n_val = static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < members.size(); ++k) {
            result.records[members[k]].split = k < n_val ? Split::validation : Split::test;
        }
    }
    return result;
}

std::vector<LintFinding> lint_neutral(std::span<const PromptRecord> records, const JudgeRules& rules) {
    std::vector<LintFinding> findings;
    for (const auto& r : records) {
        if (r.condition != Condition::neutral) continue;
        if (!rules.task.empty() && r.task != rules.task) continue;
        for (const auto& p : rules.target_patterns) {
            if (p.found_in(r.text)) findings.push_back({r.id, r.task, p.text(), "target"});
        }
        for (const auto& p : rules.opposite_patterns) {
            if (p.found_in(r.text)) findings.push_back({r.id, r.task, p.text(), "opposite"});
        }
    }
    return findings;
}

std::vector<PromptRecord> select(std::span<const PromptRecord> records, std::string_view task, Condition condition,
                                 std::optional<Split> split) {
    std::vector<PromptRecord> out;
    for (const auto& r : records) {
        if (r.task != task || r.condition != condition) continue;
        if (split && r.split != split) continue;
        out.push_back(r);
    }
    return out;
}

} // namespace steerlab
