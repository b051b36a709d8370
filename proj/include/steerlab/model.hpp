#pragma once

#include "steerlab/container.hpp"
#include "steerlab/vocab.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace steerlab {

// full   : pre-norm block, RMSNorm -> causal multi-head attention (RoPE) ->
//          residual add, RMSNorm -> SwiGLU MLP -> residual add
// linear : h <- h + M h, plus an optional bounded branch
//          h <- h + M h + W tanh(R h) when blk.<l>.read / blk.<l>.write exist
enum class BlockKind { full, linear };

std::string_view to_string(BlockKind kind);
BlockKind block_kind_from_string(std::string_view s);

struct ModelConfig {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 1;
    int d_ff = 0;
    int vocab_size = 0;
    int max_seq_len = 0;
    std::vector<BlockKind> block_kinds;
    bool final_norm = true;
    float norm_eps = 1e-5f;
    float rope_theta = 10000.0f;

    bool has_full_blocks() const;
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

struct FullBlockWeights {
    std::vector<float> attn_norm; // d
    std::vector<float> wq, wk, wv, wo; // d x d
    std::vector<float> ffn_norm; // d
    std::vector<float> ffn_gate, ffn_up; // d_ff x d
    std::vector<float> ffn_down; // d x d_ff
};

struct LinearBlockWeights {
    std::vector<float> mix; // d x d
    std::size_t read_rank = 0; // 0 when the bounded branch is absent
    std::vector<float> read; // read_rank x d
    std::vector<float> write; // d x read_rank
};

struct Block {
    BlockKind kind = BlockKind::linear;
    FullBlockWeights full;
    LinearBlockWeights linear;
};

// Immutable once constructed; safe to share across concurrent generations.
struct Model {
    ModelConfig config;
    Vocab vocab;
    std::vector<float> token_embd; // vocab x d
    std::vector<float> output; // vocab x d
    std::vector<float> output_norm; // d, present iff config.final_norm
    std::vector<Block> blocks;
    nlohmann::json metadata = nlohmann::json::object();
    std::string identifier;

    TensorFile to_tensor_file() const;
};

// Tensor names used in the container.
std::string block_tensor_name(int layer, std::string_view leaf);

// Builds a model from a decoded container, checking the manifest against the
// config: every required tensor present with its exact shape, nothing extra.
Model model_from_tensor_file(const TensorFile& file, Vocab vocab, std::string identifier);

// Reads the container at `path`. The vocabulary comes from `vocab_path`, or
// from the metadata key "vocab_file" resolved relative to the container.
Model load_model(const std::string& path, const std::optional<std::string>& vocab_path = std::nullopt);

// Writes the container and a sibling "<stem>.vocab" file.
void save_model(const Model& model, const std::string& path);

// Stamps model.identifier as "<name>:<fingerprint of encoded weights>".
void assign_identifier(Model& model);

} // namespace steerlab
