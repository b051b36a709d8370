#include "steerlab/selection.hpp"

#include "steerlab/error.hpp"
#include "steerlab/parallel.hpp"

#include <cmath>

namespace steerlab {

JudgedBatch generate_and_judge(const Model& model, std::span<const PromptRecord> prompts,
                               const std::optional<InterventionSpec>& intervention, const GenerationParams& params,
                               const Judge& judge, const BatchOptions& options) {
    JudgedBatch batch;
    batch.generations.resize(prompts.size());
    parallel_for(prompts.size(), options.workers, [&](std::size_t i) {
        const auto ids = encode_prompt(model, prompts[i].text, options.add_bos);
        if (ids.empty()) throw Error(ErrorCode::empty_prompt, "prompt '" + prompts[i].id + "' tokenizes to nothing");
        batch.generations[i] = generate(model, ids, params, intervention);
    });
    batch.verdicts = judge.judge_batch(batch.generations);
    batch.distribution = aggregate(batch.verdicts);
    return batch;
}

int select_best_layer(const std::map<int, std::size_t>& per_layer) {
    if (per_layer.empty()) throw Error(ErrorCode::invalid_argument, "no layers to select from");
    int best = per_layer.begin()->first;
    std::size_t best_count = per_layer.begin()->second;
    for (const auto& [layer, count] : per_layer) {
        if (count > best_count) {
            best = layer;
            best_count = count;
        }
    }
    return best;
}

void require_validation_neutral(std::span<const PromptRecord> prompts) {
    for (const auto& p : prompts) {
        if (p.split != Split::validation) {
            throw Error(ErrorCode::split_violation,
                        "prompt '" + p.id + "' is not in the validation split; sweeps only use validation prompts");
        }
        if (p.condition != Condition::neutral) {
            throw Error(ErrorCode::split_violation,
                        "prompt '" + p.id + "' has condition " + std::string(to_string(p.condition)) +
                            "; sweeps only use neutral prompts");
        }
    }
}

SweepResult layer_sweep(const Model& model, const DirectionBank& bank, std::span<const PromptRecord> validation_prompts,
                        float alpha, const GenerationParams& params, const Judge& judge,
                        const SweepOptions& options) {
    if (validation_prompts.empty()) throw Error(ErrorCode::empty_prompt_set, "empty validation set");
    require_validation_neutral(validation_prompts);
    check_bank_compatible(bank, model);

    std::vector<int> layers = options.layers;
    if (layers.empty()) {
        for (const auto& [layer, v] : bank.directions) layers.push_back(layer);
    }
    if (layers.empty()) throw Error(ErrorCode::invalid_layer, "direction bank holds no layers");

    SweepResult result;
    result.alpha_used = alpha;
    result.n_prompts = validation_prompts.size();
    for (int layer : layers) {
        auto spec = make_intervention(bank, model, layer, alpha, options.scope);
        auto batch = generate_and_judge(model, validation_prompts, spec, params, judge, options.batch);
        result.per_layer[layer] = batch.distribution.target;
        result.distributions[layer] = batch.distribution;
        result.batches[layer] = std::move(batch);
    }
    result.best_layer = select_best_layer(result.per_layer);
    return result;
}

std::vector<float> AlphaSweepResult::grid() const {
    std::vector<float> g;
    for (const auto& p : per_alpha) g.push_back(p.alpha);
    return g;
}

std::optional<float> select_alpha(std::span<const AlphaPoint> points, double threshold) {
    std::optional<float> best;
    std::size_t best_count = 0;
    for (const auto& p : points) {
        const double n = static_cast<double>(p.counts.n);
        const double frac = p.counts.n == 0 ? 0.0 : static_cast<double>(p.counts.degenerate) / n;
        if (frac > threshold) continue;
        if (!best || p.counts.target > best_count || (p.counts.target == best_count && p.alpha < *best)) {
            best = p.alpha;
            best_count = p.counts.target;
        }
    }
    return best;
}

AlphaSweepResult alpha_sweep(const Model& model, std::span<const float> vector, int layer,
                             std::span<const PromptRecord> prompts, std::span<const float> grid,
                             const GenerationParams& params, const Judge& judge, double degeneracy_threshold,
                             const SweepOptions& options) {
    if (grid.empty()) throw Error(ErrorCode::invalid_argument, "empty alpha grid");
    if (prompts.empty()) throw Error(ErrorCode::empty_prompt_set, "empty prompt set");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!std::isfinite(grid[i]) || grid[i] < 0.0f) {
            throw Error(ErrorCode::invalid_argument, "alpha grid values must be finite and non-negative");
        }
        if (i > 0 && !(grid[i] > grid[i - 1])) {
            throw Error(ErrorCode::invalid_argument, "alpha grid must be strictly increasing");
        }
    }
    AlphaSweepResult result;
    result.degeneracy_threshold = degeneracy_threshold;
    result.n_prompts = prompts.size();
    result.layer = layer;
    const std::vector<float> v(vector.begin(), vector.end());
    for (float alpha : grid) {
        InterventionSpec spec{layer, alpha, v, options.scope};
        validate_intervention(model, spec);
        AlphaPoint point;
        point.alpha = alpha;
        point.batch = generate_and_judge(model, prompts, spec, params, judge, options.batch);
        point.counts = point.batch.distribution;
        result.per_alpha.push_back(std::move(point));
    }
    result.selected_alpha = select_alpha(result.per_alpha, degeneracy_threshold);
    return result;
}

} // namespace steerlab
