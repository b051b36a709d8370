#pragma once

#include "steerlab/model.hpp"
#include "steerlab/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace steerlab {

// Which positions receive the residual edit during generation. Prompt-only
// leaves newly generated positions untouched.
enum class InterventionScope { all, prompt_only };

std::string_view to_string(InterventionScope scope);
InterventionScope intervention_scope_from_string(std::string_view s);

// Adds alpha * vector to the residual stream at the output of block `layer`
// (1-based), before block layer+1 (or the final norm/unembedding) reads it.
struct InterventionSpec {
    int layer = 1;
    float alpha = 0.0f;
    std::vector<float> vector;
    InterventionScope scope = InterventionScope::all;
};

// Throws invalid_layer, dimension_mismatch or invalid_argument.
void validate_intervention(const Model& model, const InterventionSpec& spec);

enum class DecodeStrategy { greedy, temperature };

std::string_view to_string(DecodeStrategy s);
DecodeStrategy decode_strategy_from_string(std::string_view s);

struct GenerationParams {
    int max_new_tokens = 16;
    DecodeStrategy strategy = DecodeStrategy::greedy;
    float temperature = 1.0f; // temperature strategy only
    std::uint64_t seed = 0;   // temperature strategy only
    std::vector<TokenId> stop_ids;
};

enum class FinishReason { length, stop };

std::string_view to_string(FinishReason r);

struct GenerationRecord {
    std::vector<TokenId> prompt_ids;
    std::vector<TokenId> output_ids; // excludes the stop token, if any
    std::string output_text;
    std::optional<InterventionSpec> intervention;
    GenerationParams params;
    FinishReason finish_reason = FinishReason::length;
};

struct ForwardResult {
    Matrix logits;                  // seq x vocab
    std::map<int, Matrix> captures; // layer -> seq x d_model, post-block (post-edit)
};

// Tokenizes `text` and optionally prepends BOS.
std::vector<TokenId> encode_prompt(const Model& model, std::string_view text, bool add_bos = true);

ForwardResult forward(const Model& model, std::span<const TokenId> ids,
                      const std::optional<InterventionSpec>& intervention = std::nullopt,
                      std::span<const int> capture_layers = {});

std::map<int, Matrix> capture_prompt_activations(const Model& model, std::span<const TokenId> ids,
                                                 std::span<const int> layers);

// Autoregressive decoding over a private KV cache. Greedy ties resolve to the
// lowest token id. Temperature sampling draws one Rng(params.seed) uniform per
// step and inverts the softmax CDF accumulated in double precision.
GenerationRecord generate(const Model& model, std::span<const TokenId> prompt_ids, const GenerationParams& params,
                          const std::optional<InterventionSpec>& intervention = std::nullopt);

} // namespace steerlab
