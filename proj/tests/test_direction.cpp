#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "steerlab/direction.hpp"
#include "steerlab/error.hpp"
#include "steerlab/planted.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

using namespace steerlab;
using namespace steerlab::testing;

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

// Straight from the definition: mean over the last min(K, T) captured rows,
// averaged per group, differenced.
std::vector<double> naive_direction(const Model& m, const std::vector<std::string>& pos,
                                    const std::vector<std::string>& neg, int layer, int k) {
    const auto d = static_cast<std::size_t>(m.config.d_model);
    auto group = [&](const std::vector<std::string>& prompts) {
        std::vector<double> acc(d, 0.0);
        for (const auto& p : prompts) {
            const auto ids = encode_prompt(m, p);
            const std::vector<int> layers = {layer};
            const auto rows = forward(m, ids, std::nullopt, layers).captures.at(layer);
            const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), rows.rows());
            for (std::size_t r = rows.rows() - take; r < rows.rows(); ++r) {
                for (std::size_t i = 0; i < d; ++i) acc[i] += rows(r, i) / static_cast<double>(take);
            }
        }
        for (auto& x : acc) x /= static_cast<double>(prompts.size());
        return acc;
    };
    const auto a = group(pos);
    const auto b = group(neg);
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = a[i] - b[i];
    return v;
}

std::vector<std::string> random_prompts(Rng& rng, std::size_t n, int vocab_size) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string s;
        const auto len = 1 + rng.uniform_index(6);
        for (std::uint64_t j = 0; j < len; ++j) s += " t" + std::to_string(3 + rng.uniform_index(vocab_size - 3));
        out.push_back(s);
    }
    return out;
}

void check_close(const std::vector<float>& got, const std::vector<double>& want, double rel) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(got[i] - want[i]) <= rel * std::abs(want[i]) + 1e-30);
    }
}

} // namespace

TEST_CASE("estimator matches the naive recomputation") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const int layers = 1 + static_cast<int>(rng.uniform_index(4));
        const Model m = make_random_model(100 + trial, layers, 8, 2, 20);
        const auto pos = random_prompts(rng, 1 + rng.uniform_index(8), 20);
        const auto neg = random_prompts(rng, 1 + rng.uniform_index(8), 20);
        EstimatorConfig cfg;
        cfg.k_last_tokens = 1 + static_cast<int>(rng.uniform_index(5));
        const auto bank = estimate_directions(m, pos, neg, cfg);
        REQUIRE(bank.directions.size() == static_cast<std::size_t>(layers));
        for (int l = 1; l <= layers; ++l) check_close(bank.at(l), naive_direction(m, pos, neg, l, cfg.k_last_tokens), 1e-6);
    }
}

TEST_CASE("K larger than the prompt is clamped") {
    const Model m = make_random_model(3, 2, 8, 2, 20);
    const std::vector<std::string> pos = {" t3 t4"};
    const std::vector<std::string> neg = {" t5"};
    EstimatorConfig big;
    big.k_last_tokens = 50;
    EstimatorConfig exact;
    exact.k_last_tokens = 3;
    CHECK(estimate_directions(m, pos, neg, big).directions == estimate_directions(m, pos, neg, exact).directions);
    check_close(estimate_directions(m, pos, neg, big).at(2), naive_direction(m, pos, neg, 2, 50), 1e-6);
}

TEST_CASE("K = 1 uses only the last position") {
    const Model m = make_random_model(4, 2, 8, 2, 20);
    const std::vector<std::string> pos = {" t3 t4 t9"};
    const std::vector<std::string> neg = {" t5 t6"};
    EstimatorConfig cfg;
    cfg.k_last_tokens = 1;
    const auto bank = estimate_directions(m, pos, neg, cfg);
    const std::vector<int> layers = {2};
    const auto a = forward(m, encode_prompt(m, pos[0]), std::nullopt, layers).captures.at(2);
    const auto b = forward(m, encode_prompt(m, neg[0]), std::nullopt, layers).captures.at(2);
    for (std::size_t i = 0; i < 8; ++i) CHECK(bank.at(2)[i] == doctest::Approx(a(3, i) - b(2, i)).epsilon(1e-6));
}

TEST_CASE("planted three-token prompts against the closed form") {
    PlantedSpec spec;
    const auto fx = build_planted_model(spec, 21);
    const PlantedOracle oracle{spec, &fx.model, &fx.truth};
    const std::vector<std::string> pos = {" a0 a1"};
    const std::vector<std::string> neg = {" b0 b1"};
    EstimatorConfig cfg;
    cfg.k_last_tokens = 2;
    const auto bank = estimate_directions(fx.model, pos, neg, cfg);
    const auto& t = fx.truth;
    for (int l = 1; l <= spec.n_layers; ++l) {
        const auto a0 = oracle.state(t.class_a[0], l), a1 = oracle.state(t.class_a[1], l);
        const auto b0 = oracle.state(t.class_b[0], l), b1 = oracle.state(t.class_b[1], l);
        for (std::size_t i = 0; i < 8; ++i) {
            const double want = 0.5 * (a0[i] + a1[i]) - 0.5 * (b0[i] + b1[i]);
            CHECK(bank.at(l)[i] == doctest::Approx(want).epsilon(1e-5).scale(1.0));
        }
    }
    // After the null block the direction is a pure u component.
    CHECK(t.cosine(bank.at(spec.n_layers)) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("identical groups give the zero vector") {
    const Model m = make_random_model(5, 2, 8, 2, 20);
    const std::vector<std::string> p = {" t3 t4", " t7"};
    for (bool normalize : {false, true}) {
        EstimatorConfig cfg;
        cfg.normalize = normalize;
        for (const auto& [l, v] : estimate_directions(m, p, p, cfg).directions) {
            for (float x : v) CHECK(x == 0.0f);
        }
    }
}

TEST_CASE("singleton groups are the plain difference") {
    const Model m = make_random_model(6, 1, 8, 2, 20);
    const std::vector<std::string> pos = {" t3"};
    const std::vector<std::string> neg = {" t4"};
    EstimatorConfig cfg;
    cfg.k_last_tokens = 1;
    const auto v = estimate_directions(m, pos, neg, cfg).at(1);
    const auto a = prompt_representation(m, pos[0], 1, 1);
    const auto b = prompt_representation(m, neg[0], 1, 1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(v[i] == doctest::Approx(a[i] - b[i]).epsilon(1e-6));
}

TEST_CASE("algebraic properties") {
    Rng rng(23);
    const Model m = make_random_model(7, 2, 8, 2, 20);
    const auto pos = random_prompts(rng, 10, 20);
    const auto neg = random_prompts(rng, 10, 20);
    EstimatorConfig cfg;
    const auto base = estimate_directions(m, pos, neg, cfg);

    SUBCASE("brute force on 10 vs 10") {
        for (int l = 1; l <= 2; ++l) check_close(base.at(l), naive_direction(m, pos, neg, l, cfg.k_last_tokens), 1e-6);
    }
    SUBCASE("swap negates") {
        const auto rev = estimate_directions(m, neg, pos, cfg);
        for (int l = 1; l <= 2; ++l) {
            for (std::size_t i = 0; i < 8; ++i) CHECK(rev.at(l)[i] == doctest::Approx(-base.at(l)[i]).epsilon(1e-6));
        }
    }
    SUBCASE("order does not matter") {
        auto shuffled = pos;
        std::reverse(shuffled.begin(), shuffled.end());
        const auto other = estimate_directions(m, shuffled, neg, cfg);
        for (int l = 1; l <= 2; ++l) {
            for (std::size_t i = 0; i < 8; ++i) CHECK(other.at(l)[i] == doctest::Approx(base.at(l)[i]).epsilon(1e-6));
        }
    }
    SUBCASE("duplicating every prompt changes nothing") {
        auto p2 = pos, n2 = neg;
        p2.insert(p2.end(), pos.begin(), pos.end());
        n2.insert(n2.end(), neg.begin(), neg.end());
        const auto other = estimate_directions(m, p2, n2, cfg);
        for (int l = 1; l <= 2; ++l) {
            for (std::size_t i = 0; i < 8; ++i) CHECK(other.at(l)[i] == doctest::Approx(base.at(l)[i]).epsilon(1e-6));
        }
    }
    SUBCASE("normalized vectors are unit length and parallel") {
        EstimatorConfig unit = cfg;
        unit.normalize = true;
        const auto other = estimate_directions(m, pos, neg, unit);
        CHECK(other.metadata.normalized);
        for (int l = 1; l <= 2; ++l) {
            double ss = 0.0, dot = 0.0, raw = 0.0;
            for (std::size_t i = 0; i < 8; ++i) {
                ss += other.at(l)[i] * other.at(l)[i];
                dot += other.at(l)[i] * base.at(l)[i];
                raw += base.at(l)[i] * base.at(l)[i];
            }
            CHECK(ss == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(dot == doctest::Approx(std::sqrt(raw)).epsilon(1e-5));
        }
    }
    SUBCASE("worker count does not change the result") {
        EstimatorConfig par = cfg;
        par.workers = 4;
        CHECK(estimate_directions(m, pos, neg, par) == base);
    }
    SUBCASE("layer subset") {
        EstimatorConfig sub = cfg;
        sub.layers = {2};
        const auto other = estimate_directions(m, pos, neg, sub);
        CHECK(other.directions.size() == 1u);
        CHECK(other.at(2) == base.at(2));
        CHECK(code_of([&] { other.at(1); }) == ErrorCode::invalid_layer);
        sub.layers = {3};
        CHECK(code_of([&] { estimate_directions(m, pos, neg, sub); }) == ErrorCode::invalid_layer);
    }
}

TEST_CASE("estimator errors") {
    const Model m = make_random_model(8, 2, 8, 2, 20);
    const std::vector<std::string> some = {" t3"};
    const std::vector<std::string> none;
    EstimatorConfig cfg;
    CHECK(code_of([&] { estimate_directions(m, none, some, cfg); }) == ErrorCode::empty_prompt_set);
    CHECK(message_of([&] { estimate_directions(m, some, none, cfg); }).find("empty prompt set") != std::string::npos);
    cfg.k_last_tokens = 0;
    CHECK(code_of([&] { estimate_directions(m, some, some, cfg); }) == ErrorCode::invalid_argument);
    cfg.k_last_tokens = 2;
    cfg.add_bos = false;
    const std::vector<std::string> blank = {""};
    CHECK(code_of([&] { estimate_directions(m, blank, some, cfg); }) == ErrorCode::empty_prompt);
}

TEST_CASE("bank persistence") {
    TempDir dir("bank");
    const Model m = make_random_model(9, 3, 8, 2, 20);
    const std::vector<std::string> pos = {" t3 t4", " t5"};
    const std::vector<std::string> neg = {" t6", " t7 t8 t9"};
    BankMetadata meta;
    meta.task = "demo";
    meta.target_label = "yes";
    meta.opposite_label = "no";
    meta.extra = {{"seed", 4}};
    const auto bank = estimate_directions(m, pos, neg, EstimatorConfig{}, meta);
    CHECK(bank.metadata.model_id == m.identifier);
    CHECK(bank.metadata.n_positive == 2u);
    const std::string path = dir.file("demo.bank");
    save_bank(bank, path);
    CHECK(load_bank(path) == bank);

    SUBCASE("missing label names the field") {
        auto file = read_tensor_file(path);
        file.metadata.erase("target_label");
        write_tensor_file(path, file);
        CHECK(code_of([&] { load_bank(path); }) == ErrorCode::metadata);
        CHECK(message_of([&] { load_bank(path); }).find("target_label") != std::string::npos);
    }
    SUBCASE("wrong width") {
        auto file = read_tensor_file(path);
        file.tensors["layer_1/v"] = Tensor{{7}, std::vector<float>(7, 0.0f)};
        write_tensor_file(path, file);
        CHECK(code_of([&] { load_bank(path); }) == ErrorCode::dimension_mismatch);
    }
    SUBCASE("model mismatch") {
        const Model wide = make_random_model(9, 3, 12, 2, 20);
        CHECK(code_of([&] { check_bank_compatible(bank, wide); }) == ErrorCode::dimension_mismatch);
        CHECK(code_of([&] { make_intervention(bank, wide, 1, 1.0f); }) == ErrorCode::dimension_mismatch);
        const Model shallow = make_random_model(9, 2, 8, 2, 20);
        CHECK(code_of([&] { check_bank_compatible(bank, shallow); }) == ErrorCode::invalid_layer);
        const auto spec = make_intervention(bank, m, 2, 1.5f);
        CHECK(spec.vector == bank.at(2));
        CHECK(spec.alpha == 1.5f);
    }
}
