#include "steerlab/planted.hpp"

#include "steerlab/error.hpp"
#include "steerlab/random.hpp"

#include <cmath>
#include <numbers>

namespace steerlab {

using nlohmann::json;

namespace {

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// d orthonormal vectors from Gram-Schmidt over Gaussian draws; degenerate draws
// are simply redrawn.
std::vector<Vec> random_frame(std::size_t d, Rng& rng) {
    std::vector<Vec> frame;
    while (frame.size() < d) {
        Vec v(d);
        for (auto& x : v) x = rng.standard_normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : frame) {
                const double p = dot(v, b);
                for (std::size_t i = 0; i < d; ++i) v[i] -= p * b[i];
            }
        }
        const double n = std::sqrt(dot(v, v));
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        frame.push_back(std::move(v));
    }
    return frame;
}

std::vector<float> to_float(const Vec& v) {
    return {v.begin(), v.end()};
}

double theta(int j, int m) {
    return 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
}

} // namespace

void PlantedSpec::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, "planted spec: " + what); };
    if (d_model < 5) fail("d_model must be at least 5 (u, e0, w and the identity plane)");
    if (n_layers < 1) fail("n_layers must be positive");
    if (null_block < 1 || null_block > n_layers) fail("null_block must lie in [1, n_layers]");
    if (!(attenuation > 0.0 && attenuation < 1.0)) fail("attenuation must lie in (0, 1)");
    if (!(class_margin > 0.0)) fail("class_margin must be positive");
    if (!(default_bias > 0.0)) fail("default_bias must be positive");
    if (n_class_tokens < 1) fail("n_class_tokens must be positive");
    if (n_fillers < 1) fail("n_fillers must be positive");
    if (!(concept_scale > 0.0)) fail("concept_scale must be positive");
    if (!(identity_radius > 0.0)) fail("identity_radius must be positive");
    if (max_seq_len < 8) fail("max_seq_len must be at least 8");
}

std::string planted_class_token(bool class_a, int j) {
    return std::string(class_a ? " a" : " b") + std::to_string(j);
}

int planted_generation_length(const PlantedSpec& spec, int ngram) {
    return 2 * spec.n_class_tokens + ngram - 2;
}

std::string planted_filler_token(int j) {
    return " f" + std::to_string(j);
}

double PlantedTruth::alpha_threshold(int layer) const {
    if (layer < null_block) return std::numeric_limits<double>::infinity();
    return default_bias / std::pow(attenuation, n_layers - layer);
}

double PlantedTruth::projection(std::span<const float> v) const {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size() && i < v.size(); ++i) s += static_cast<double>(v[i]) * u[i];
    return s;
}

double PlantedTruth::cosine(std::span<const float> v) const {
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * static_cast<double>(x);
    if (n == 0.0) return 0.0;
    return projection(v) / std::sqrt(n);
}

double PlantedTruth::predicted_threshold(std::span<const float> v, int layer) const {
    const double p = projection(v);
    if (layer < null_block || !(p > 0.0)) return std::numeric_limits<double>::infinity();
    return default_bias / (p * std::pow(attenuation, n_layers - layer));
}

double PlantedTruth::conflict_threshold(std::span<const float> v, int layer) const {
    const double p = projection(v);
    if (layer < null_block || !(p > 0.0)) return std::numeric_limits<double>::infinity();
    const double margin = default_bias + branch_gain * std::tanh(concept_scale);
    return margin / (p * std::pow(attenuation, n_layers - layer));
}

json PlantedTruth::to_json() const {
    json thresholds = json::object();
    for (int l = 1; l <= n_layers; ++l) {
        const double t = alpha_threshold(l);
        thresholds[std::to_string(l)] = std::isfinite(t) ? json(t) : json(nullptr);
    }
    return {{"u", u},
            {"best_layer", best_layer},
            {"null_block", null_block},
            {"n_layers", n_layers},
            {"attenuation", attenuation},
            {"default_bias", default_bias},
            {"alpha_threshold", thresholds},
            {"class_a", class_a},
            {"class_b", class_b},
            {"fillers", fillers},
            {"default_token", default_token}};
}

PlantedFixture build_planted_model(const PlantedSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto d = static_cast<std::size_t>(spec.d_model);
    const int m = spec.n_class_tokens;
    const int n_layers = spec.n_layers;
    const int p = spec.null_block;

    Rng rng(seed);
    const auto frame = random_frame(d, rng);
    const Vec& u = frame[0];
    const Vec& e0 = frame[1];
    const Vec& w = frame[2];
    const Vec& q1 = frame[3];
    const Vec& q2 = frame[4];

    std::vector<std::string> tokens = {"<bos>", "<eos>", "<unk>"};
    PlantedTruth truth;
    for (int j = 0; j < m; ++j) {
        truth.class_a.push_back(static_cast<TokenId>(tokens.size()));
        tokens.push_back(planted_class_token(true, j));
    }
    for (int j = 0; j < m; ++j) {
        truth.class_b.push_back(static_cast<TokenId>(tokens.size()));
        tokens.push_back(planted_class_token(false, j));
    }
    for (int j = 0; j < spec.n_fillers; ++j) {
        truth.fillers.push_back(static_cast<TokenId>(tokens.size()));
        tokens.push_back(planted_filler_token(j));
    }
    const std::size_t n_vocab = tokens.size();

    auto identity = [&](int j) {
        Vec z(d);
        const double t = theta(j, m);
        for (std::size_t i = 0; i < d; ++i) z[i] = spec.identity_radius * (std::cos(t) * q1[i] + std::sin(t) * q2[i]);
        return z;
    };

    std::vector<Vec> embd(n_vocab, e0);
    for (int j = 0; j < m; ++j) {
        const Vec z = identity(j);
        for (std::size_t i = 0; i < d; ++i) {
            embd[static_cast<std::size_t>(truth.class_a[j])][i] += spec.concept_scale * w[i] + z[i];
            embd[static_cast<std::size_t>(truth.class_b[j])][i] += -spec.concept_scale * w[i] + z[i];
        }
    }
    for (TokenId f : truth.fillers) {
        for (std::size_t axis = 5; axis < d; ++axis) {
            const double coef = spec.identity_radius * rng.standard_normal();
            for (std::size_t i = 0; i < d; ++i) embd[static_cast<std::size_t>(f)][i] += coef * frame[axis][i];
        }
    }

    const double tail = std::pow(spec.attenuation, n_layers - p);
    const double b = spec.default_bias / tail;
    const double s = 0.5 * spec.default_bias / tail;
    const double sigma = m >= 2 ? 0.25 / (spec.identity_radius * spec.identity_radius * (1.0 - std::cos(theta(1, m))))
                                : 0.0;

    std::vector<Vec> unembd(n_vocab, Vec(d));
    for (auto& row : unembd) {
        for (std::size_t i = 0; i < d; ++i) row[i] = -e0[i];
    }
    for (int j = 0; j < m; ++j) {
        const double cj = spec.class_margin * (1.0 + (m > 1 ? 0.01 * j / (m - 1) : 0.0));
        const double tie_a = 1e-3 * (2.0 * j + 1.0) / (2.0 * m);
        const double tie_b = 1e-3 * (2.0 * j + 2.0) / (2.0 * m);
        const Vec prev = identity((j + m - 1) % m);
        auto& ra = unembd[static_cast<std::size_t>(truth.class_a[j])];
        auto& rb = unembd[static_cast<std::size_t>(truth.class_b[j])];
        for (std::size_t i = 0; i < d; ++i) {
            ra[i] = cj * u[i] + tie_a * e0[i] + sigma * prev[i];
            rb[i] = -cj * u[i] + tie_b * e0[i] + sigma * prev[i];
        }
    }

    Model model;
    model.config.n_layers = n_layers;
    model.config.d_model = spec.d_model;
    model.config.n_heads = 1;
    model.config.d_ff = spec.d_model;
    model.config.vocab_size = static_cast<int>(n_vocab);
    model.config.max_seq_len = spec.max_seq_len;
    model.config.block_kinds.assign(static_cast<std::size_t>(n_layers), BlockKind::linear);
    model.config.final_norm = false;
    model.config.validate();
    model.vocab = Vocab(tokens);

    model.token_embd.reserve(n_vocab * d);
    model.output.reserve(n_vocab * d);
    for (std::size_t t = 0; t < n_vocab; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            model.token_embd.push_back(static_cast<float>(embd[t][i]));
            model.output.push_back(static_cast<float>(unembd[t][i]));
        }
    }

    for (int l = 1; l <= n_layers; ++l) {
        Block blk;
        blk.kind = BlockKind::linear;
        blk.linear.mix.assign(d * d, 0.0f);
        if (l == p) {
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t k = 0; k < d; ++k) {
                    blk.linear.mix[i * d + k] = static_cast<float>(-u[i] * u[k] - b * u[i] * e0[k] - w[i] * w[k]);
                }
            }
            blk.linear.read_rank = 1;
            blk.linear.read = to_float(w);
            blk.linear.write.resize(d);
            for (std::size_t i = 0; i < d; ++i) blk.linear.write[i] = static_cast<float>(s * u[i]);
        } else if (l > p) {
            const double k_scale = -(1.0 - spec.attenuation);
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t k = 0; k < d; ++k) blk.linear.mix[i * d + k] = static_cast<float>(k_scale * u[i] * u[k]);
            }
        }
        model.blocks.push_back(std::move(blk));
    }

    model.metadata = {{"name", "planted"},
                      {"fixture",
                       {{"seed", seed},
                        {"d_model", spec.d_model},
                        {"n_layers", n_layers},
                        {"null_block", p},
                        {"attenuation", spec.attenuation},
                        {"class_margin", spec.class_margin},
                        {"default_bias", spec.default_bias},
                        {"n_class_tokens", m},
                        {"n_fillers", spec.n_fillers}}}};
    assign_identifier(model);

    truth.u = u;
    truth.e0 = e0;
    truth.w = w;
    truth.q1 = q1;
    truth.q2 = q2;
    truth.best_layer = n_layers;
    truth.null_block = p;
    truth.n_layers = n_layers;
    truth.attenuation = spec.attenuation;
    truth.default_bias = spec.default_bias;
    truth.branch_gain = 0.5 * spec.default_bias;
    truth.concept_scale = spec.concept_scale;

    // After BOS alone the final state is e0 - beta u.
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n_vocab; ++t) {
        const double logit = dot(unembd[t], e0) - spec.default_bias * dot(unembd[t], u);
        if (logit > best) {
            best = logit;
            truth.default_token = static_cast<TokenId>(t);
        }
    }
    return {std::move(model), std::move(truth)};
}

PlantedPrompts make_planted_prompts(const PlantedSpec& spec, int n_per_set, std::uint64_t seed) {
    spec.validate();
    if (n_per_set < 1) throw Error(ErrorCode::invalid_argument, "need at least one prompt per set");
    const auto m = static_cast<std::uint64_t>(spec.n_class_tokens);
    const auto n_fill = static_cast<std::uint64_t>(spec.n_fillers);
    Rng rng(seed);
    PlantedPrompts out;
    for (int i = 0; i < n_per_set; ++i) {
        std::string prefix;
        const auto n_prefix = 1 + rng.uniform_index(4);
        for (std::uint64_t k = 0; k < n_prefix; ++k) prefix += planted_filler_token(static_cast<int>(rng.uniform_index(n_fill)));
        const auto n_suffix = 4 + rng.uniform_index(3);
        const auto start = rng.uniform_index(m);
        std::string pos = prefix;
        std::string neg = prefix;
        for (std::uint64_t k = 0; k < n_suffix; ++k) {
            const int j = static_cast<int>((start + k) % m);
            pos += planted_class_token(true, j);
            neg += planted_class_token(false, j);
        }
        out.positives.push_back(std::move(pos));
        out.negatives.push_back(std::move(neg));

        std::string neutral;
        const auto n_neutral = 2 + rng.uniform_index(5);
        for (std::uint64_t k = 0; k < n_neutral; ++k) neutral += planted_filler_token(static_cast<int>(rng.uniform_index(n_fill)));
        out.neutrals.push_back(std::move(neutral));
    }
    return out;
}

JudgeRules planted_rules(const PlantedSpec& spec, const std::string& task) {
    JudgeRules rules;
    rules.task = task;
    rules.mode = JudgeMode::token_class;
    rules.min_token_class_fraction = 0.5;
    for (int j = 0; j < spec.n_class_tokens; ++j) {
        rules.target_patterns.push_back(Pattern::literal("a" + std::to_string(j)));
        rules.opposite_patterns.push_back(Pattern::literal("b" + std::to_string(j)));
    }
    rules.validate();
    return rules;
}

TaskSpec planted_task(const std::string& task) {
    return {task, "class_a", "class_b"};
}

std::vector<PromptRecord> planted_records(const PlantedPrompts& prompts, const std::string& task) {
    std::vector<PromptRecord> records;
    auto add = [&](const std::vector<std::string>& texts, Condition c, const char* tag) {
        for (std::size_t i = 0; i < texts.size(); ++i) {
            records.push_back({task + "-" + tag + "-" + std::to_string(i), task, c, texts[i], std::nullopt});
        }
    };
    add(prompts.positives, Condition::target, "tgt");
    add(prompts.negatives, Condition::opposite, "opp");
    add(prompts.neutrals, Condition::neutral, "neu");
    return records;
}

} // namespace steerlab
