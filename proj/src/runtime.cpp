#include "steerlab/runtime.hpp"

#include "steerlab/error.hpp"
#include "steerlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace steerlab {

std::string_view to_string(InterventionScope scope) {
    return scope == InterventionScope::all ? "all" : "prompt_only";
}

InterventionScope intervention_scope_from_string(std::string_view s) {
    if (s == "all") return InterventionScope::all;
    if (s == "prompt_only") return InterventionScope::prompt_only;
    throw Error(ErrorCode::invalid_argument, "unknown intervention scope '" + std::string(s) + "'");
}

std::string_view to_string(DecodeStrategy s) {
    return s == DecodeStrategy::greedy ? "greedy" : "temperature";
}

DecodeStrategy decode_strategy_from_string(std::string_view s) {
    if (s == "greedy") return DecodeStrategy::greedy;
    if (s == "temperature") return DecodeStrategy::temperature;
    throw Error(ErrorCode::invalid_argument, "unknown decoding strategy '" + std::string(s) + "'");
}

std::string_view to_string(FinishReason r) {
    return r == FinishReason::length ? "length" : "stop";
}

void validate_intervention(const Model& model, const InterventionSpec& spec) {
    if (spec.layer < 1 || spec.layer > model.config.n_layers) {
        throw Error(ErrorCode::invalid_layer, "intervention layer " + std::to_string(spec.layer) +
                                                  " outside [1, " + std::to_string(model.config.n_layers) + "]");
    }
    if (!(spec.alpha >= 0.0f) || !std::isfinite(spec.alpha)) {
        throw Error(ErrorCode::invalid_argument, "intervention strength must be finite and non-negative");
    }
    if (spec.vector.size() != static_cast<std::size_t>(model.config.d_model)) {
        throw Error(ErrorCode::dimension_mismatch, "intervention vector has length " +
                                                       std::to_string(spec.vector.size()) + ", model d_model is " +
                                                       std::to_string(model.config.d_model));
    }
    for (float x : spec.vector) {
        if (!std::isfinite(x)) throw Error(ErrorCode::invalid_argument, "intervention vector has non-finite entries");
    }
}

std::vector<TokenId> encode_prompt(const Model& model, std::string_view text, bool add_bos) {
    std::vector<TokenId> ids;
    if (add_bos) ids.push_back(kBosId);
    auto body = model.vocab.tokenize(text);
    ids.insert(ids.end(), body.begin(), body.end());
    return ids;
}

namespace {

// out[i] = sum_j w[i * cols + j] * x[j], accumulated in order.
void matvec(const std::vector<float>& w, std::span<const float> x, std::span<float> out) {
    const std::size_t cols = x.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float* row = w.data() + i * cols;
        float acc = 0.0f;
        for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
}

void rms_norm(std::span<const float> h, const std::vector<float>& gain, float eps, std::span<float> out) {
    float ss = 0.0f;
    for (float v : h) ss += v * v;
    const float scale = 1.0f / std::sqrt(ss / static_cast<float>(h.size()) + eps);
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] * scale * gain[i];
}

void apply_rope(std::span<float> v, std::size_t n_heads, std::size_t head_dim, std::size_t pos, float theta) {
    for (std::size_t hd = 0; hd < n_heads; ++hd) {
        float* x = v.data() + hd * head_dim;
        for (std::size_t i = 0; i < head_dim; i += 2) {
            const float freq = std::pow(theta, -static_cast<float>(i) / static_cast<float>(head_dim));
            const float angle = static_cast<float>(pos) * freq;
            const float c = std::cos(angle);
            const float s = std::sin(angle);
            const float a = x[i];
            const float b = x[i + 1];
            x[i] = a * c - b * s;
            x[i + 1] = a * s + b * c;
        }
    }
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

// Per-generation state: KV cache and position counter. Prefill and decode both
// go through step(), so a forward pass over a sequence and token-by-token
// decoding of the same sequence perform identical arithmetic.
class DecodeSession {
public:
    DecodeSession(const Model& model, const std::optional<InterventionSpec>& intervention)
        : model_(model),
          d_(static_cast<std::size_t>(model.config.d_model)),
          keys_(model.blocks.size()),
          values_(model.blocks.size()),
          h_(d_),
          x_(d_),
          q_(d_),
          k_(d_),
          v_(d_),
          attn_(d_),
          tmp_(d_) {
        if (intervention) {
            validate_intervention(model, *intervention);
            edit_layer_ = intervention->layer;
            edit_.resize(d_);
            for (std::size_t i = 0; i < d_; ++i) edit_[i] = intervention->alpha * intervention->vector[i];
        }
        if (model.config.has_full_blocks()) {
            const auto f = static_cast<std::size_t>(model.config.d_ff);
            gate_.resize(f);
            up_.resize(f);
        }
    }

    std::size_t position() const { return pos_; }

    // Runs one token through every block. `edit` selects whether the residual
    // edit applies at this position; `logits` may be empty to skip the head.
    void step(TokenId id, bool edit, std::map<int, Matrix>* captures, std::span<float> logits) {
        if (id < 0 || id >= model_.config.vocab_size) {
            throw Error(ErrorCode::invalid_argument, "token id " + std::to_string(id) + " out of range");
        }
        if (pos_ >= static_cast<std::size_t>(model_.config.max_seq_len)) {
            throw Error(ErrorCode::context_overflow, "sequence exceeds max_seq_len " +
                                                         std::to_string(model_.config.max_seq_len));
        }
        const float* e = model_.token_embd.data() + static_cast<std::size_t>(id) * d_;
        std::copy(e, e + d_, h_.begin());

        for (std::size_t l = 0; l < model_.blocks.size(); ++l) {
            const Block& b = model_.blocks[l];
            if (b.kind == BlockKind::full) {
                full_block(b.full, l);
            } else {
                linear_block(b.linear);
            }
            const int layer = static_cast<int>(l) + 1;
            if (edit && layer == edit_layer_) {
                for (std::size_t i = 0; i < d_; ++i) h_[i] += edit_[i];
            }
            if (captures) {
                auto it = captures->find(layer);
                if (it != captures->end()) it->second.append_row(h_);
            }
        }

        if (!logits.empty()) {
            std::span<const float> final_h = h_;
            if (model_.config.final_norm) {
                rms_norm(h_, model_.output_norm, model_.config.norm_eps, x_);
                final_h = x_;
            }
            matvec(model_.output, final_h, logits);
        }
        ++pos_;
    }

private:
    void linear_block(const LinearBlockWeights& w) {
        matvec(w.mix, h_, tmp_);
        if (w.read_rank > 0) {
            branch_.resize(w.read_rank);
            matvec(w.read, h_, branch_);
            for (auto& t : branch_) t = std::tanh(t);
            matvec(w.write, branch_, x_);
            for (std::size_t i = 0; i < d_; ++i) tmp_[i] += x_[i];
        }
        for (std::size_t i = 0; i < d_; ++i) h_[i] += tmp_[i];
    }

    void full_block(const FullBlockWeights& w, std::size_t l) {
        const auto& cfg = model_.config;
        const auto n_heads = static_cast<std::size_t>(cfg.n_heads);
        const std::size_t hd = d_ / n_heads;

        rms_norm(h_, w.attn_norm, cfg.norm_eps, x_);
        matvec(w.wq, x_, q_);
        matvec(w.wk, x_, k_);
        matvec(w.wv, x_, v_);
        apply_rope(q_, n_heads, hd, pos_, cfg.rope_theta);
        apply_rope(k_, n_heads, hd, pos_, cfg.rope_theta);
        auto& keys = keys_[l];
        auto& values = values_[l];
        keys.insert(keys.end(), k_.begin(), k_.end());
        values.insert(values.end(), v_.begin(), v_.end());

        const std::size_t n_ctx = pos_ + 1;
        const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
        scores_.resize(n_ctx);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const float* qh = q_.data() + h * hd;
            float max_score = -std::numeric_limits<float>::infinity();
            for (std::size_t j = 0; j < n_ctx; ++j) {
                const float* kj = keys.data() + j * d_ + h * hd;
                float s = 0.0f;
                for (std::size_t i = 0; i < hd; ++i) s += qh[i] * kj[i];
                scores_[j] = s * inv_sqrt;
                max_score = std::max(max_score, scores_[j]);
            }
            float denom = 0.0f;
            for (std::size_t j = 0; j < n_ctx; ++j) {
                scores_[j] = std::exp(scores_[j] - max_score);
                denom += scores_[j];
            }
            float* out = attn_.data() + h * hd;
            std::fill(out, out + hd, 0.0f);
            for (std::size_t j = 0; j < n_ctx; ++j) {
                const float p = scores_[j] / denom;
                const float* vj = values.data() + j * d_ + h * hd;
                for (std::size_t i = 0; i < hd; ++i) out[i] += p * vj[i];
            }
        }
        matvec(w.wo, attn_, tmp_);
        for (std::size_t i = 0; i < d_; ++i) h_[i] += tmp_[i];

        rms_norm(h_, w.ffn_norm, cfg.norm_eps, x_);
        matvec(w.ffn_gate, x_, gate_);
        matvec(w.ffn_up, x_, up_);
        for (std::size_t i = 0; i < gate_.size(); ++i) gate_[i] = silu(gate_[i]) * up_[i];
        matvec(w.ffn_down, gate_, tmp_);
        for (std::size_t i = 0; i < d_; ++i) h_[i] += tmp_[i];
    }

    const Model& model_;
    std::size_t d_;
    std::size_t pos_ = 0;
    int edit_layer_ = 0;
    std::vector<float> edit_;
    std::vector<std::vector<float>> keys_, values_;
    std::vector<float> h_, x_, q_, k_, v_, attn_, tmp_, gate_, up_, scores_, branch_;
};

std::map<int, Matrix> make_capture_slots(const Model& model, std::span<const int> layers) {
    std::map<int, Matrix> slots;
    for (int l : layers) {
        if (l < 1 || l > model.config.n_layers) {
            throw Error(ErrorCode::invalid_layer, "capture layer " + std::to_string(l) + " outside [1, " +
                                                      std::to_string(model.config.n_layers) + "]");
        }
        slots.emplace(l, Matrix());
    }
    return slots;
}

TokenId argmax(std::span<const float> logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

TokenId sample(std::span<const float> logits, double temperature, Rng& rng) {
    const float max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> weights(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        weights[i] = std::exp((static_cast<double>(logits[i]) - max_logit) / temperature);
        total += weights[i];
    }
    const double target = rng.uniform_unit() * total;
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        cumulative += weights[i];
        last_positive = i;
        if (cumulative > target) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(last_positive);
}

} // namespace

ForwardResult forward(const Model& model, std::span<const TokenId> ids,
                      const std::optional<InterventionSpec>& intervention, std::span<const int> capture_layers) {
    if (ids.size() > static_cast<std::size_t>(model.config.max_seq_len)) {
        throw Error(ErrorCode::context_overflow, "sequence of length " + std::to_string(ids.size()) +
                                                     " exceeds max_seq_len " +
                                                     std::to_string(model.config.max_seq_len));
    }
    ForwardResult result;
    result.captures = make_capture_slots(model, capture_layers);
    result.logits = Matrix(ids.size(), static_cast<std::size_t>(model.config.vocab_size));
    for (auto& [layer, m] : result.captures) m = Matrix(0, static_cast<std::size_t>(model.config.d_model));

    DecodeSession session(model, intervention);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        session.step(ids[t], true, &result.captures, result.logits.row(t));
    }
    return result;
}

std::map<int, Matrix> capture_prompt_activations(const Model& model, std::span<const TokenId> ids,
                                                 std::span<const int> layers) {
    return forward(model, ids, std::nullopt, layers).captures;
}

GenerationRecord generate(const Model& model, std::span<const TokenId> prompt_ids, const GenerationParams& params,
                          const std::optional<InterventionSpec>& intervention) {
    if (prompt_ids.empty()) throw Error(ErrorCode::empty_prompt, "generation needs a non-empty prompt");
    if (params.max_new_tokens < 1) throw Error(ErrorCode::invalid_argument, "max_new_tokens must be positive");
    if (params.strategy == DecodeStrategy::temperature && !(params.temperature > 0.0f)) {
        throw Error(ErrorCode::invalid_argument, "temperature must be positive");
    }
    if (prompt_ids.size() + static_cast<std::size_t>(params.max_new_tokens) >
        static_cast<std::size_t>(model.config.max_seq_len)) {
        throw Error(ErrorCode::context_overflow, "prompt length " + std::to_string(prompt_ids.size()) +
                                                     " plus max_new_tokens " +
                                                     std::to_string(params.max_new_tokens) + " exceeds max_seq_len " +
                                                     std::to_string(model.config.max_seq_len));
    }

    GenerationRecord rec;
    rec.prompt_ids.assign(prompt_ids.begin(), prompt_ids.end());
    rec.intervention = intervention;
    rec.params = params;

    const bool edit_generated = !intervention || intervention->scope == InterventionScope::all;
    DecodeSession session(model, intervention);
    std::vector<float> logits(static_cast<std::size_t>(model.config.vocab_size));
    for (std::size_t t = 0; t < prompt_ids.size(); ++t) {
        const bool last = t + 1 == prompt_ids.size();
        session.step(prompt_ids[t], true, nullptr, last ? std::span<float>(logits) : std::span<float>());
    }

    const std::set<TokenId> stops(params.stop_ids.begin(), params.stop_ids.end());
    Rng rng(params.seed);
    for (int n = 0; n < params.max_new_tokens; ++n) {
        const TokenId next = params.strategy == DecodeStrategy::greedy
                                 ? argmax(logits)
                                 : sample(logits, params.temperature, rng);
        if (stops.contains(next)) {
            rec.finish_reason = FinishReason::stop;
            break;
        }
        rec.output_ids.push_back(next);
        if (n + 1 == params.max_new_tokens) break;
        session.step(next, edit_generated, nullptr, logits);
    }
    rec.output_text = model.vocab.detokenize(rec.output_ids);
    return rec;
}

} // namespace steerlab
