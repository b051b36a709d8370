#pragma once

#include "steerlab/corpus.hpp"
#include "steerlab/direction.hpp"
#include "steerlab/judge.hpp"
#include "steerlab/runtime.hpp"

#include <map>
#include <optional>
#include <span>
#include <vector>

namespace steerlab {

struct JudgedBatch {
    std::vector<GenerationRecord> generations; // slot i belongs to prompt i
    std::vector<Verdict> verdicts;
    Distribution distribution;
};

struct BatchOptions {
    std::size_t workers = 1;
    bool add_bos = true;
};

// Generates once per prompt (optionally with an intervention), then judges the
// whole batch. Results are keyed by prompt index.
JudgedBatch generate_and_judge(const Model& model, std::span<const PromptRecord> prompts,
                               const std::optional<InterventionSpec>& intervention, const GenerationParams& params,
                               const Judge& judge, const BatchOptions& options = {});

struct SweepResult {
    std::map<int, std::size_t> per_layer; // M_l, the number of target verdicts
    std::map<int, Distribution> distributions;
    std::map<int, JudgedBatch> batches;
    int best_layer = 0;
    float alpha_used = 0.0f;
    std::size_t n_prompts = 0;
};

// Layer with the largest count; ties go to the lowest layer.
int select_best_layer(const std::map<int, std::size_t>& per_layer);

struct SweepOptions {
    std::vector<int> layers; // empty means every layer in the bank
    InterventionScope scope = InterventionScope::all;
    BatchOptions batch;
};

// Every prompt must be neutral and assigned to the validation split; anything
// else is refused with split_violation before any generation happens.
SweepResult layer_sweep(const Model& model, const DirectionBank& bank, std::span<const PromptRecord> validation_prompts,
                        float alpha, const GenerationParams& params, const Judge& judge,
                        const SweepOptions& options = {});

struct AlphaPoint {
    float alpha = 0.0f;
    Distribution counts;
    JudgedBatch batch;
};

struct AlphaSweepResult {
    std::vector<AlphaPoint> per_alpha; // same order as the grid
    std::optional<float> selected_alpha;
    double degeneracy_threshold = 0.1;
    std::size_t n_prompts = 0;
    int layer = 0;

    std::vector<float> grid() const;
};

// Smallest alpha maximizing target count among points whose degenerate
// fraction is at most `threshold`; nullopt when none qualifies.
std::optional<float> select_alpha(std::span<const AlphaPoint> points, double threshold);

// Used both for choosing alpha on the validation split and for the alpha-curve
// experiment on the test split, so the split is not checked here.
AlphaSweepResult alpha_sweep(const Model& model, std::span<const float> vector, int layer,
                             std::span<const PromptRecord> prompts, std::span<const float> grid,
                             const GenerationParams& params, const Judge& judge, double degeneracy_threshold = 0.1,
                             const SweepOptions& options = {});

// Throws split_violation unless every record is a neutral validation prompt.
void require_validation_neutral(std::span<const PromptRecord> prompts);

} // namespace steerlab
