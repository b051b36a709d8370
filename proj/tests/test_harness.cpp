#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/harness.hpp"
#include "test_support.hpp"

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <sys/wait.h>

using namespace steerlab;
using namespace steerlab::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::invalid_argument;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

json read_json_file(const std::string& path) {
    return json::parse(read_file_bytes(path));
}

double target_frac(const json& entry) {
    return entry.at("distribution").at("target_frac").get<double>();
}

// A run file holding one entry with the given labels.
json synthetic_run(const std::vector<std::string>& labels) {
    json records = json::array();
    std::size_t t = 0, o = 0, n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        records.push_back({{"id", std::to_string(i)},
                           {"prompt", "p"},
                           {"output_ids", json::array()},
                           {"output_text", ""},
                           {"finish_reason", "length"},
                           {"verdict", {{"label", labels[i]}, {"degenerate", false}, {"repetition_score", 0.0},
                                        {"truncated", false}}}});
        t += labels[i] == "target";
        o += labels[i] == "opposite";
        n += labels[i] == "neither";
    }
    json dist = {{"n", labels.size()}, {"target", t}, {"opposite", o}, {"neither", n}, {"degenerate", 0}};
    return {{"schema_version", 1},
            {"kind", "run"},
            {"mode", "neutral"},
            {"task", {{"name", "pt_tf"}, {"target_label", "PyTorch"}, {"opposite_label", "TensorFlow"}}},
            {"entries",
             {{{"condition", "neutral"}, {"intervention", "L4 a=2"}, {"layer", 4}, {"alpha", 2.0},
               {"distribution", dist}, {"records", records}}}}};
}

int run_cli(const std::string& args, const std::string& out_file, const std::string& err_file) {
    const std::string cmd = std::string("\"") + STEERLAB_CLI + "\" " + args + " > \"" + out_file + "\" 2> \"" +
                            err_file + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("config round trip and validation") {
    ExperimentConfig c;
    c.model = "m.steer";
    c.prompts = {"a.jsonl", "b.jsonl"};
    c.task = planted_task();
    c.alpha = 2.0f;
    c.alpha_grid = {0.5f, 1.0f};
    c.judge.rules = "rules.json";
    c.layers = {2, 4};
    c.scope = InterventionScope::prompt_only;
    c.conflict.prompt_condition = Condition::target;
    c.conflict.steer_toward = Condition::opposite;
    const auto back = ExperimentConfig::from_json(c.to_json(), "/base");
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(back.resolve("x/../m.steer") == "/base/m.steer");
    CHECK(back.resolve("/abs/p") == "/abs/p");
    c.seed = 5;
    CHECK(c.hash() != back.hash());

    ExperimentConfig bad = c;
    bad.alpha_grid = {-1.0f};
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::invalid_argument);
    bad = c;
    bad.conflict.steer_toward = Condition::target;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::invalid_argument);
    bad = c;
    bad.judge.rules.clear();
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::invalid_argument);
    CHECK(code_of([] { ExperimentConfig::from_json({{"sweep_split", "train"}}); }) == ErrorCode::parse);
    CHECK(code_of([] { ExperimentConfig::from_json({{"judge", {{"mode", "oracle"}}}}); }) == ErrorCode::parse);
}

TEST_CASE("end-to-end on the planted fixture") {
    TempDir dir("harness");
    const PlantedSpec spec;
    const auto planted = cmd_planted(dir.path().string(), spec, 7, 20);
    const auto cfg = ExperimentConfig::load(planted.config_path);
    REQUIRE(cfg.alpha.has_value());
    CHECK(*cfg.alpha == doctest::Approx(2.0 * planted.truth.alpha_threshold(spec.n_layers)));

    const auto est = cmd_estimate(cfg);
    CHECK(est.path == (dir.path() / "out" / "bank" / "planted.bank").string());
    CHECK(planted.truth.cosine(est.bank.at(spec.n_layers)) >= 0.9);
    CHECK(est.bank.metadata.n_positive == 10u);
    const std::string first = read_file_bytes(est.path);
    cmd_estimate(cfg);
    CHECK(read_file_bytes(est.path) == first);

    const auto sweep = cmd_sweep_layer(cfg);
    CHECK(sweep.result.best_layer == spec.n_layers);
    const auto sweep_doc = read_json_file(sweep.path);
    CHECK(sweep_doc.at("schema_version") == 1);
    CHECK(sweep_doc.at("kind") == "layer_sweep");
    CHECK(sweep_doc.at("best_layer") == spec.n_layers);
    CHECK(sweep_doc.at("provenance").at("config_hash") == cfg.hash());
    CHECK(sweep_doc.at("provenance").at("bank_id").get<std::string>().rfind("planted:", 0) == 0);
    for (const auto& entry : sweep_doc.at("entries")) {
        for (const auto& r : entry.at("records")) CHECK(r.at("id").get<std::string>().find("-neu-") != std::string::npos);
    }

    const auto alpha = cmd_sweep_alpha(cfg);
    REQUIRE(alpha.result.selected_alpha.has_value());
    CHECK(*alpha.result.selected_alpha == doctest::Approx(cfg.alpha_grid[3]));

    const auto baseline = cmd_run(cfg, RunMode::baseline);
    CHECK(target_frac(baseline.report.at("entries")[0]) == 0.0);
    const auto neutral = cmd_run(cfg, RunMode::neutral);
    CHECK(target_frac(neutral.report.at("entries")[0]) >= 0.95);
    CHECK(neutral.report.at("layer") == spec.n_layers);
    const auto conflict = cmd_run(cfg, RunMode::conflict);
    REQUIRE(conflict.report.at("entries").size() == 2u);
    CHECK(conflict.report.at("entries")[0].at("condition") == "opposite");
    CHECK(target_frac(conflict.report.at("entries")[1]) > target_frac(conflict.report.at("entries")[0]));
    const auto curve = cmd_run(cfg, RunMode::alpha_sweep);
    CHECK(curve.report.at("entries").size() == cfg.alpha_grid.size());
    for (const auto& entry : neutral.report.at("entries")[0].at("records")) {
        CHECK(entry.at("id").get<std::string>().find("-neu-") != std::string::npos);
    }

    std::vector<std::string> files = {baseline.path, neutral.path, conflict.path, curve.path, alpha.path, sweep.path};
    const auto rep = cmd_report(files, reports_dir(cfg));
    const auto dist = read_file_bytes((fs::path(reports_dir(cfg)) / "distributions.csv").string());
    CHECK(dist.rfind("task,condition,intervention,target_frac,opposite_frac,neither_frac,degenerate_frac\n", 0) == 0);
    CHECK(dist.find("planted,neutral,none,0,1,0,0\n") != std::string::npos);
    CHECK(dist.find("planted,opposite,none,0,1,0,0\n") != std::string::npos);
    const auto test_curve = read_file_bytes((fs::path(reports_dir(cfg)) / "alpha_planted.csv").string());
    const auto val_curve = read_file_bytes((fs::path(reports_dir(cfg)) / "alpha_planted_validation.csv").string());
    CHECK(test_curve.rfind("alpha,target_frac,degenerate_frac\n", 0) == 0);
    CHECK(val_curve.rfind("alpha,target_frac,degenerate_frac\n", 0) == 0);
    // single step at the first grid point above the threshold
    std::vector<double> fracs;
    std::istringstream lines(test_curve);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        const auto a = line.find(',');
        fracs.push_back(std::stod(line.substr(a + 1, line.find(',', a + 1) - a - 1)));
    }
    CHECK(fracs == std::vector<double>{0, 0, 0, 1, 1, 1, 1});
    CHECK(fs::exists(fs::path(reports_dir(cfg)) / "summary.txt"));
    CHECK_FALSE(rep.summary.empty());

    SUBCASE("fixed rerun is reproducible apart from timestamps") {
        auto strip = [](json j) {
            j["provenance"].erase("created_at");
            return j;
        };
        const auto again = cmd_run(cfg, RunMode::neutral);
        CHECK(strip(again.report) == strip(neutral.report));
    }
    SUBCASE("alpha = 0 sweep is flat and picks layer 1") {
        auto zero = cfg;
        zero.alpha = 0.0f;
        const auto flat = cmd_sweep_layer(zero);
        for (const auto& [l, m] : flat.result.per_layer) CHECK(m == 0u);
        CHECK(flat.result.best_layer == 1);
    }
    SUBCASE("sweeps refuse the test split") {
        auto leaky = cfg;
        leaky.sweep_split = Split::test;
        CHECK(code_of([&] { cmd_sweep_layer(leaky); }) == ErrorCode::split_violation);
        CHECK(code_of([&] { cmd_sweep_alpha(leaky); }) == ErrorCode::split_violation);
    }
    SUBCASE("bank and model must agree") {
        auto other = cfg;
        other.bank = (dir.path() / "wide.bank").string();
        DirectionBank wide = est.bank;
        wide.d_model = 9;
        for (auto& [l, v] : wide.directions) v.push_back(0.0f);
        save_bank(wide, *other.bank);
        CHECK(code_of([&] { cmd_run(other, RunMode::neutral); }) == ErrorCode::dimension_mismatch);
    }
}

TEST_CASE("estimate with no positives") {
    TempDir dir("harness_empty");
    const auto planted = cmd_planted(dir.path().string(), PlantedSpec{}, 3, 6);
    auto records = load_prompts((dir.path() / "prompts.jsonl").string());
    std::erase_if(records, [](const PromptRecord& r) { return r.condition == Condition::target; });
    save_prompts((dir.path() / "prompts.jsonl").string(), records);
    const auto cfg = ExperimentConfig::load(planted.config_path);
    CHECK(code_of([&] { cmd_estimate(cfg); }) == ErrorCode::empty_prompt_set);
    CHECK(message_of([&] { cmd_estimate(cfg); }).find("empty prompt set") != std::string::npos);
    CHECK(code_of([&] { cmd_run(cfg, RunMode::conflict); }) == ErrorCode::io);
}

TEST_CASE("conflict mode needs its prompt condition") {
    TempDir dir("harness_conflict");
    const auto planted = cmd_planted(dir.path().string(), PlantedSpec{}, 3, 6);
    auto cfg = ExperimentConfig::load(planted.config_path);
    cmd_estimate(cfg);
    auto records = load_prompts((dir.path() / "prompts.jsonl").string());
    std::erase_if(records, [](const PromptRecord& r) { return r.condition == Condition::opposite; });
    save_prompts((dir.path() / "prompts.jsonl").string(), records);
    cfg.layer = 4;
    CHECK(code_of([&] { cmd_run(cfg, RunMode::conflict); }) == ErrorCode::missing_condition);
}

TEST_CASE("report arithmetic and checks") {
    TempDir dir("report");
    const std::string run = dir.file("run.json");
    write_file_bytes(run, synthetic_run({"target", "target", "opposite", "neither"}).dump());
    cmd_report({run}, dir.file("rep"));
    const auto csv = read_file_bytes(dir.file("rep/distributions.csv"));
    CHECK(csv.find("pt_tf,neutral,L4 a=2,0.5,0.25,0.25,0\n") != std::string::npos);

    cmd_report({}, dir.file("empty"));
    CHECK(read_file_bytes(dir.file("empty/distributions.csv")) ==
          "task,condition,intervention,target_frac,opposite_frac,neither_frac,degenerate_frac\n");

    auto wrong_version = synthetic_run({"target"});
    wrong_version["schema_version"] = 2;
    write_file_bytes(dir.file("v2.json"), wrong_version.dump());
    CHECK(code_of([&] { cmd_report({dir.file("v2.json")}, dir.file("x")); }) == ErrorCode::schema_mismatch);

    auto tampered = synthetic_run({"target", "opposite"});
    tampered["entries"][0]["distribution"]["target"] = 2;
    write_file_bytes(dir.file("bad.json"), tampered.dump());
    CHECK(code_of([&] { cmd_report({dir.file("bad.json")}, dir.file("x")); }) == ErrorCode::integrity);
}

TEST_CASE("corpus validation command") {
    TempDir dir("validate");
    const std::vector<PromptRecord> records = {
        {"1", "pt_tf", Condition::neutral, "Train a model", std::nullopt},
        {"2", "pt_tf", Condition::neutral, "Train a torch model", std::nullopt},
        {"3", "pt_tf", Condition::neutral, "Train  a model ", std::nullopt},
        {"4", "pt_tf", Condition::target, "Use torch", std::nullopt},
    };
    save_prompts(dir.file("p.jsonl"), records);
    write_file_bytes(dir.file("rules.json"), R"({"task":"pt_tf","target":["torch"],"opposite":["tensorflow"]})");
    const auto check = cmd_validate_corpus({dir.file("p.jsonl")}, dir.file("rules.json"));
    CHECK(check.n_records == 4u);
    CHECK(check.n_after_dedup == 3u);
    REQUIRE(check.findings.size() == 1u);
    CHECK(check.findings[0].id == "2");
    REQUIRE(check.warnings.size() == 1u);
    CHECK(check.warnings[0].find("target") != std::string::npos);
}

TEST_CASE("command-line interface") {
    TempDir dir("cli");
    const std::string out = dir.file("stdout.txt");
    const std::string err = dir.file("stderr.txt");
    const std::string fixture = dir.file("fx");

    CHECK(run_cli("planted \"" + fixture + "\" --class-tokens 2 --n 12", out, err) == 0);
    const auto planted = json::parse(read_file_bytes(out));
    const std::string config = planted.at("config");
    CHECK(fs::exists(config));

    CHECK(run_cli("estimate -c \"" + config + "\"", out, err) == 0);
    CHECK(json::parse(read_file_bytes(out)).at("n_positive") == 6);
    CHECK(run_cli("sweep-layer -c \"" + config + "\"", out, err) == 0);
    CHECK(json::parse(read_file_bytes(out)).at("best_layer") == 4);
    CHECK(run_cli("run -c \"" + config + "\" --mode baseline", out, err) == 0);
    CHECK(run_cli("report -c \"" + config + "\"", out, err) == 0);
    CHECK(fs::exists(fs::path(fixture) / "out" / "reports" / "distributions.csv"));

    CHECK(run_cli("sweep-layer -c \"" + config + "\" --sweep-split test", out, err) == 1);
    const auto line = json::parse(read_file_bytes(err));
    CHECK(line.at("error") == "split_violation");
    CHECK(line.at("message").get<std::string>().find("validation") != std::string::npos);

    CHECK(run_cli("estimate -c \"" + dir.file("missing.json") + "\"", out, err) == 1);
    CHECK(json::parse(read_file_bytes(err)).at("error") == "io");

    CHECK(run_cli("run -c \"" + config + "\" --mode sideways", out, err) != 0);
    CHECK(run_cli("no-such-command", out, err) == 2);
}
