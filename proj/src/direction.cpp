#include "steerlab/direction.hpp"

#include "steerlab/error.hpp"
#include "steerlab/parallel.hpp"

#include <charconv>
#include <cmath>
#include <optional>

namespace steerlab {

using nlohmann::json;

namespace {

constexpr int kBankSchemaVersion = 1;

std::string layer_tensor_name(int layer) {
    return "layer_" + std::to_string(layer) + "/v";
}

std::optional<int> parse_layer_tensor_name(std::string_view name) {
    constexpr std::string_view prefix = "layer_";
    constexpr std::string_view suffix = "/v";
    if (!name.starts_with(prefix) || !name.ends_with(suffix)) return std::nullopt;
    const auto digits = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    int layer = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), layer);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
    return layer;
}

// Accumulated in double so the difference of two means keeps full float
// precision even when the means nearly cancel.
std::vector<double> mean_of_last_rows(const Matrix& rows, int k) {
    const std::size_t t = rows.rows();
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), t);
    std::vector<double> acc(rows.cols(), 0.0);
    for (std::size_t r = t - take; r < t; ++r) {
        auto row = rows.row(r);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += row[i];
    }
    for (auto& x : acc) x /= static_cast<double>(take);
    return acc;
}

std::vector<int> resolve_layers(const Model& model, const std::vector<int>& requested) {
    std::vector<int> layers = requested;
    if (layers.empty()) {
        for (int l = 1; l <= model.config.n_layers; ++l) layers.push_back(l);
    }
    for (int l : layers) {
        if (l < 1 || l > model.config.n_layers) {
            throw Error(ErrorCode::invalid_layer, "layer " + std::to_string(l) + " outside [1, " +
                                                      std::to_string(model.config.n_layers) + "]");
        }
    }
    return layers;
}

// Per-prompt, per-layer representations. Slot i holds prompt i.
std::vector<std::map<int, std::vector<double>>> represent_all(const Model& model, std::span<const std::string> prompts,
                                                             const std::vector<int>& layers,
                                                             const EstimatorConfig& config,
                                                             std::string_view set_name,
                                                             std::vector<std::string>& failures) {
    std::vector<std::map<int, std::vector<double>>> reps(prompts.size());
    std::vector<std::string> errors(prompts.size());
    parallel_for(prompts.size(), config.workers, [&](std::size_t i) {
        try {
            const auto ids = encode_prompt(model, prompts[i], config.add_bos);
            if (ids.empty()) throw Error(ErrorCode::empty_prompt, "prompt tokenizes to nothing");
            const auto captures = capture_prompt_activations(model, ids, layers);
            for (const auto& [layer, m] : captures) reps[i][layer] = mean_of_last_rows(m, config.k_last_tokens);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i].empty()) failures.push_back(std::string(set_name) + " prompt #" + std::to_string(i) + ": " + errors[i]);
    }
    return reps;
}

std::vector<double> group_mean(const std::vector<std::map<int, std::vector<double>>>& reps, int layer, std::size_t d) {
    std::vector<double> acc(d, 0.0);
    for (const auto& rep : reps) {
        const auto& v = rep.at(layer);
        for (std::size_t i = 0; i < d; ++i) acc[i] += v[i];
    }
    for (auto& x : acc) x /= static_cast<double>(reps.size());
    return acc;
}

template <class T>
T require_field(const json& meta, const char* field) {
    if (!meta.contains(field)) throw Error(ErrorCode::metadata, std::string("bank metadata lacks '") + field + "'");
    try {
        return meta[field].get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorCode::metadata, std::string("bank metadata field '") + field + "' has the wrong type");
    }
}

} // namespace

const std::vector<float>& DirectionBank::at(int layer) const {
    auto it = directions.find(layer);
    if (it == directions.end()) {
        throw Error(ErrorCode::invalid_layer, "direction bank has no vector for layer " + std::to_string(layer));
    }
    return it->second;
}

std::vector<float> prompt_representation(const Model& model, std::span<const TokenId> ids, int layer, int k) {
    if (ids.empty()) throw Error(ErrorCode::empty_prompt, "cannot represent an empty prompt");
    if (k < 1) throw Error(ErrorCode::invalid_argument, "K must be at least 1");
    if (layer < 1 || layer > model.config.n_layers) {
        throw Error(ErrorCode::invalid_layer, "layer " + std::to_string(layer) + " outside [1, " +
                                                  std::to_string(model.config.n_layers) + "]");
    }
    const int layers[] = {layer};
    const auto captures = capture_prompt_activations(model, ids, layers);
    const auto mean = mean_of_last_rows(captures.at(layer), k);
    return {mean.begin(), mean.end()};
}

std::vector<float> prompt_representation(const Model& model, std::string_view prompt, int layer, int k,
                                         bool add_bos) {
    if (prompt.empty()) throw Error(ErrorCode::empty_prompt, "cannot represent an empty prompt");
    return prompt_representation(model, encode_prompt(model, prompt, add_bos), layer, k);
}

DirectionBank estimate_directions(const Model& model, std::span<const std::string> positives,
                                  std::span<const std::string> negatives, const EstimatorConfig& config,
                                  BankMetadata metadata) {
    if (positives.empty() || negatives.empty()) {
        throw Error(ErrorCode::empty_prompt_set, "empty prompt set");
    }
    if (config.k_last_tokens < 1) throw Error(ErrorCode::invalid_argument, "K must be at least 1");
    const auto layers = resolve_layers(model, config.layers);

    std::vector<std::string> failures;
    const auto pos = represent_all(model, positives, layers, config, "positive", failures);
    const auto neg = represent_all(model, negatives, layers, config, "negative", failures);
    if (!failures.empty()) {
        std::string msg = "failed to represent " + std::to_string(failures.size()) + " prompt(s)";
        for (const auto& f : failures) msg += "; " + f;
        throw Error(ErrorCode::empty_prompt, msg);
    }

    const auto d = static_cast<std::size_t>(model.config.d_model);
    DirectionBank bank;
    bank.d_model = model.config.d_model;
    for (int layer : layers) {
        const auto mu_pos = group_mean(pos, layer, d);
        const auto mu_neg = group_mean(neg, layer, d);
        std::vector<double> diff(d);
        for (std::size_t i = 0; i < d; ++i) diff[i] = mu_pos[i] - mu_neg[i];
        if (config.normalize) {
            double ss = 0.0;
            for (double x : diff) ss += x * x;
            const double norm = std::sqrt(ss);
            if (norm > 0.0) {
                for (auto& x : diff) x /= norm;
            }
        }
        std::vector<float> v(diff.begin(), diff.end());
        bank.directions[layer] = std::move(v);
    }

    bank.metadata = std::move(metadata);
    bank.metadata.k_last_tokens = config.k_last_tokens;
    bank.metadata.n_positive = positives.size();
    bank.metadata.n_negative = negatives.size();
    bank.metadata.normalized = config.normalize;
    if (bank.metadata.model_id.empty()) bank.metadata.model_id = model.identifier;
    return bank;
}

TensorFile bank_to_tensor_file(const DirectionBank& bank) {
    TensorFile file;
    const auto& m = bank.metadata;
    file.metadata = {{"kind", "direction_bank"},
                     {"schema_version", kBankSchemaVersion},
                     {"d_model", bank.d_model},
                     {"task", m.task},
                     {"target_label", m.target_label},
                     {"opposite_label", m.opposite_label},
                     {"k_last_tokens", m.k_last_tokens},
                     {"n_positive", m.n_positive},
                     {"n_negative", m.n_negative},
                     {"model_id", m.model_id},
                     {"normalized", m.normalized},
                     {"extra", m.extra}};
    for (const auto& [layer, v] : bank.directions) {
        file.tensors[layer_tensor_name(layer)] = Tensor{{v.size()}, v};
    }
    return file;
}

DirectionBank bank_from_tensor_file(const TensorFile& file) {
    const json& meta = file.metadata;
    if (meta.value("kind", "") != "direction_bank") {
        throw Error(ErrorCode::metadata, "container is not a direction bank");
    }
    if (require_field<int>(meta, "schema_version") != kBankSchemaVersion) {
        throw Error(ErrorCode::schema_mismatch, "unsupported direction bank schema version");
    }
    DirectionBank bank;
    bank.d_model = require_field<int>(meta, "d_model");
    if (bank.d_model < 1) throw Error(ErrorCode::metadata, "bank metadata field 'd_model' must be positive");
    bank.metadata.task = require_field<std::string>(meta, "task");
    bank.metadata.target_label = require_field<std::string>(meta, "target_label");
    bank.metadata.opposite_label = require_field<std::string>(meta, "opposite_label");
    bank.metadata.k_last_tokens = require_field<int>(meta, "k_last_tokens");
    bank.metadata.n_positive = require_field<std::size_t>(meta, "n_positive");
    bank.metadata.n_negative = require_field<std::size_t>(meta, "n_negative");
    bank.metadata.model_id = require_field<std::string>(meta, "model_id");
    bank.metadata.normalized = meta.value("normalized", false);
    bank.metadata.extra = meta.value("extra", json::object());

    for (const auto& [name, tensor] : file.tensors) {
        const auto layer = parse_layer_tensor_name(name);
        if (!layer || *layer < 1) throw Error(ErrorCode::malformed_header, "unexpected tensor '" + name + "' in bank");
        if (tensor.shape.size() != 1 || tensor.shape[0] != static_cast<std::size_t>(bank.d_model)) {
            throw Error(ErrorCode::dimension_mismatch, "tensor '" + name + "' does not have length d_model " +
                                                           std::to_string(bank.d_model));
        }
        bank.directions[*layer] = tensor.data;
    }
    return bank;
}

void save_bank(const DirectionBank& bank, const std::string& path) {
    write_tensor_file(path, bank_to_tensor_file(bank));
}

DirectionBank load_bank(const std::string& path) {
    return bank_from_tensor_file(read_tensor_file(path));
}

void check_bank_compatible(const DirectionBank& bank, const Model& model) {
    if (bank.d_model != model.config.d_model) {
        throw Error(ErrorCode::dimension_mismatch, "direction bank has d_model " + std::to_string(bank.d_model) +
                                                       " but the model has " +
                                                       std::to_string(model.config.d_model));
    }
    for (const auto& [layer, v] : bank.directions) {
        if (layer > model.config.n_layers) {
            throw Error(ErrorCode::invalid_layer, "direction bank covers layer " + std::to_string(layer) +
                                                      " beyond the model's " +
                                                      std::to_string(model.config.n_layers));
        }
    }
}

InterventionSpec make_intervention(const DirectionBank& bank, const Model& model, int layer, float alpha,
                                   InterventionScope scope) {
    check_bank_compatible(bank, model);
    InterventionSpec spec{layer, alpha, bank.at(layer), scope};
    validate_intervention(model, spec);
    return spec;
}

} // namespace steerlab
