#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/judge.hpp"
#include "steerlab/random.hpp"
#include "test_support.hpp"

#include <set>

using namespace steerlab;

namespace {

JudgeRules torch_rules() {
    return JudgeRules::from_json({{"task", "pytorch_tensorflow"},
                                  {"target", {"import torch", "torch.", {{"regex", "\\bnn\\.Module\\b"}}}},
                                  {"opposite", {"import tensorflow", "tf.", {{"literal", "keras"}}}}});
}

JudgeRules class_rules(double fraction) {
    return JudgeRules::from_json({{"task", "toy"},
                                  {"mode", "token_class"},
                                  {"target", {"a0", "a1"}},
                                  {"opposite", {"b0", {{"regex", "b[1-9]"}}}},
                                  {"min_token_class_fraction", fraction}});
}

double brute_repetition(const std::vector<TokenId>& ids, int n) {
    if (ids.size() < static_cast<std::size_t>(n)) return 0.0;
    std::vector<std::vector<TokenId>> grams;
    for (std::size_t i = 0; i + n <= ids.size(); ++i) grams.emplace_back(ids.begin() + i, ids.begin() + i + n);
    std::size_t distinct = 0;
    for (std::size_t i = 0; i < grams.size(); ++i) {
        bool seen = false;
        for (std::size_t j = 0; j < i && !seen; ++j) seen = grams[j] == grams[i];
        if (!seen) ++distinct;
    }
    return 1.0 - static_cast<double>(distinct) / static_cast<double>(grams.size());
}

} // namespace

TEST_CASE("pattern rules") {
    const auto rules = torch_rules();
    CHECK(judge_local("import torch\nx = torch.zeros(3)", rules).label == Label::target);
    CHECK(judge_local("import tensorflow as tf", rules).label == Label::opposite);
    CHECK(judge_local("class Net(nn.Module): pass", rules).label == Label::target);
    CHECK(judge_local("import torch\nimport tensorflow", rules).label == Label::neither);
    CHECK(judge_local("print('hello')", rules).label == Label::neither);
    CHECK_FALSE(judge_local("print('hello')", rules).truncated);
}

TEST_CASE("empty output is neither and truncated") {
    const auto rules = torch_rules();
    for (const char* text : {"", "   ", "\n\t "}) {
        const auto v = judge_local(text, rules);
        CHECK(v.label == Label::neither);
        CHECK(v.truncated);
    }
}

TEST_CASE("swapping the sides swaps the verdicts") {
    const auto rules = torch_rules();
    const auto swapped = rules.swapped();
    for (const char* text : {"import torch", "import tensorflow", "keras and torch.", "nothing", "", "nn.Module"}) {
        const auto a = judge_local(text, rules).label;
        const auto b = judge_local(text, swapped).label;
        if (a == Label::target) CHECK(b == Label::opposite);
        if (a == Label::opposite) CHECK(b == Label::target);
        if (a == Label::neither) CHECK(b == Label::neither);
    }
    const auto cls = class_rules(0.5);
    for (const char* text : {" a0 a1 b0", " b0 b1", " f1 a0", " a0 b0"}) {
        const auto a = judge_local(text, cls).label;
        const auto b = judge_local(text, cls.swapped()).label;
        CHECK((a == Label::neither) == (b == Label::neither));
        CHECK((a == Label::target) == (b == Label::opposite));
    }
}

TEST_CASE("token class fractions") {
    const auto rules = class_rules(0.5);
    CHECK(judge_local(" a0 a1 a0 a1", rules).label == Label::target);
    CHECK(judge_local(" b0 b3 b1", rules).label == Label::opposite);
    CHECK(judge_local(" a0 f1 f2", rules).label == Label::neither);
    CHECK(judge_local(" a0 a1 f2 f3", rules).label == Label::target);
    CHECK(judge_local(" a0 a1 b0 b1", rules).label == Label::neither);
    // words must match whole: "a01" is neither class
    CHECK(judge_local(" a01 a01", rules).label == Label::neither);
    const auto strict = class_rules(0.0);
    CHECK(judge_local(" a0 f1 f2 f3", strict).label == Label::target);
    CHECK(judge_local(" f1 f2", strict).label == Label::neither);
}

TEST_CASE("rules validation") {
    using nlohmann::json;
    auto code = [](const json& j) {
        try {
            JudgeRules::from_json(j);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::io;
    };
    CHECK(code({{"target", {{{"regex", "([a-"}}}}, {"opposite", json::array()}}) == ErrorCode::invalid_rules);
    CHECK(code({{"target", {"x"}}, {"opposite", {"x"}}}) == ErrorCode::invalid_rules);
    CHECK(code({{"target", {"x"}}, {"opposite", {"y"}}, {"min_token_class_fraction", 1.5}}) == ErrorCode::invalid_rules);
    CHECK(code({{"target", {"x"}}, {"opposite", {"y"}}, {"repetition_n", 0}}) == ErrorCode::invalid_rules);
    CHECK(code({{"target", {"x"}}, {"opposite", {"y"}}, {"mode", "vibes"}}) == ErrorCode::invalid_rules);
    CHECK(code({{"target", {"x"}}}) == ErrorCode::invalid_rules);
    CHECK(code({{"target", {42}}, {"opposite", {"y"}}}) == ErrorCode::invalid_rules);

    const auto rules = torch_rules();
    const auto again = JudgeRules::from_json(rules.to_json());
    CHECK(again.to_json() == rules.to_json());

    testing::TempDir dir("rules");
    write_file_bytes(dir.file("bad.json"), "{nope");
    CHECK_THROWS_AS(JudgeRules::load(dir.file("bad.json")), Error);
    write_file_bytes(dir.file("good.json"), rules.to_json().dump());
    CHECK(JudgeRules::load(dir.file("good.json")).to_json() == rules.to_json());
}

TEST_CASE("repetition score") {
    CHECK(repetition_score(std::vector<TokenId>(20, 7), 4) == doctest::Approx(1.0 - 1.0 / 17.0));
    std::vector<TokenId> distinct(10);
    for (int i = 0; i < 10; ++i) distinct[static_cast<std::size_t>(i)] = i;
    CHECK(repetition_score(distinct, 4) == 0.0);
    CHECK(repetition_score(std::vector<TokenId>{1, 1, 1}, 4) == 0.0);
    CHECK(repetition_score(std::vector<TokenId>{}, 4) == 0.0);
    CHECK(repetition_score(std::vector<TokenId>{5, 5, 5, 5}, 4) == 0.0);
    CHECK(repetition_score(std::vector<TokenId>{1, 2, 1, 2}, 1) == doctest::Approx(0.5));
    CHECK_THROWS_AS(repetition_score(distinct, 0), Error);

    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto ids = testing::random_ids(rng, rng.uniform_index(30), 4);
        const int n = 1 + static_cast<int>(rng.uniform_index(5));
        const double s = repetition_score(ids, n);
        CHECK(s == doctest::Approx(brute_repetition(ids, n)));
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("degeneracy flag uses the configured threshold") {
    Verdict v;
    score_degeneracy(v, std::vector<TokenId>(20, 3), DegeneracyConfig{});
    CHECK(v.degenerate);
    std::vector<TokenId> cycle;
    for (int i = 0; i < 16; ++i) cycle.push_back(3 + i % 8);
    score_degeneracy(v, cycle, DegeneracyConfig{});
    CHECK(v.repetition_score == doctest::Approx(1.0 - 8.0 / 13.0));
    CHECK_FALSE(v.degenerate);
    score_degeneracy(v, cycle, DegeneracyConfig{4, 0.3});
    CHECK(v.degenerate);
}

TEST_CASE("aggregate") {
    CHECK(aggregate(std::vector<Verdict>{}) == Distribution{});
    CHECK(Distribution{}.target_frac() == 0.0);

    std::vector<Verdict> four(4);
    four[0].label = four[1].label = Label::target;
    four[2].label = Label::opposite;
    four[3].degenerate = true;
    const auto d = aggregate(four);
    CHECK(d.target_frac() == 0.5);
    CHECK(d.opposite_frac() == 0.25);
    CHECK(d.neither_frac() == 0.25);
    CHECK(d.degenerate == 1u);

    std::vector<Verdict> hundred(100);
    for (std::size_t i = 0; i < 73; ++i) hundred[i].label = Label::target;
    CHECK(aggregate(hundred).target_frac() == doctest::Approx(0.73));

    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Verdict> vs(1 + rng.uniform_index(40));
        for (auto& v : vs) {
            v.label = static_cast<Label>(rng.uniform_index(3));
            v.degenerate = rng.uniform_index(2) == 1;
        }
        const auto a = aggregate(vs);
        CHECK(a.target + a.opposite + a.neither == vs.size());
        CHECK(a.target_frac() + a.opposite_frac() + a.neither_frac() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("verdict json round trip") {
    Verdict v;
    v.label = Label::opposite;
    v.degenerate = true;
    v.repetition_score = 0.75;
    CHECK(Verdict::from_json(v.to_json()) == v);
    CHECK_THROWS_AS(Verdict::from_json({{"label", "maybe"}}), Error);
}

TEST_CASE("local judge scores text and ids") {
    const LocalJudge judge(class_rules(0.5));
    GenerationRecord rec;
    rec.output_ids = std::vector<TokenId>(20, 4);
    rec.output_text = " a0 a0 a0";
    const auto v = judge.judge(rec);
    CHECK(v.label == Label::target);
    CHECK(v.degenerate);
    const std::vector<GenerationRecord> batch = {rec, rec};
    CHECK(judge.judge_batch(batch).size() == 2u);
}
