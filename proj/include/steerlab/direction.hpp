#pragma once

#include "steerlab/model.hpp"
#include "steerlab/runtime.hpp"

#include <json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace steerlab {

struct EstimatorConfig {
    int k_last_tokens = 4;
    std::vector<int> layers; // empty means 1..n_layers
    bool normalize = false;  // store unit vectors instead of the raw difference
    bool add_bos = true;
    std::size_t workers = 1;
};

struct BankMetadata {
    std::string task;
    std::string target_label;
    std::string opposite_label;
    int k_last_tokens = 0;
    std::size_t n_positive = 0;
    std::size_t n_negative = 0;
    std::string model_id;
    bool normalized = false;
    nlohmann::json extra = nlohmann::json::object();

    bool operator==(const BankMetadata&) const = default;
};

// Per-layer difference-in-means directions: for each layer, the mean
// last-K representation of the positive prompts minus that of the negatives.
struct DirectionBank {
    int d_model = 0;
    std::map<int, std::vector<float>> directions;
    BankMetadata metadata;

    const std::vector<float>& at(int layer) const;
    bool operator==(const DirectionBank&) const = default;
};

// Mean of the last min(K, T) post-block residual rows at `layer`.
std::vector<float> prompt_representation(const Model& model, std::span<const TokenId> ids, int layer, int k);
std::vector<float> prompt_representation(const Model& model, std::string_view prompt, int layer, int k,
                                         bool add_bos = true);

DirectionBank estimate_directions(const Model& model, std::span<const std::string> positives,
                                  std::span<const std::string> negatives, const EstimatorConfig& config,
                                  BankMetadata metadata = {});

void save_bank(const DirectionBank& bank, const std::string& path);
DirectionBank load_bank(const std::string& path);
DirectionBank bank_from_tensor_file(const TensorFile& file);
TensorFile bank_to_tensor_file(const DirectionBank& bank);

// Throws dimension_mismatch / invalid_layer when the bank cannot be applied.
void check_bank_compatible(const DirectionBank& bank, const Model& model);

InterventionSpec make_intervention(const DirectionBank& bank, const Model& model, int layer, float alpha,
                                   InterventionScope scope = InterventionScope::all);

} // namespace steerlab
