#pragma once

#include "steerlab/corpus.hpp"
#include "steerlab/judge.hpp"
#include "steerlab/model.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace steerlab {

// Toy linear-block model whose steering direction, effective layer and flip
// threshold are known in closed form.
//
// An orthonormal frame is drawn from the seeded Rng: u (the planted direction),
// e0 (a constant bias channel), w (the concept carrier), q1/q2 (an identity
// plane for class tokens) and the remaining axes (filler identities).
//
//   embeddings   class A_j : e0 + gamma w + z_j      z_j = r (cos t_j q1 + sin t_j q2)
//                class B_j : e0 - gamma w + z_j      t_j = 2 pi j / m
//                fillers   : e0 + small filler-axis identity
//                specials  : e0
//   blocks < p   zero mix
//   block p      mix = -u u^T - b u e0^T - w w^T, plus the bounded branch
//                s u tanh(<w, h>)
//   blocks > p   mix = -(1 - a) u u^T
//   unembedding  A_j : +c_j u + dA_j e0 + sigma z_{j-1}
//                B_j : -c_j u + dB_j e0 + sigma z_{j-1}
//                rest: -e0
//
// with b = beta / a^(N-p) and s = (beta / 2) / a^(N-p). At the last layer the
// u-coordinate of a token's state is -beta + (beta/2) tanh(+-gamma) for class
// tokens and -beta otherwise, so class B wins by default; anything injected
// along u at a layer >= p reaches the head scaled by a^(N-layer), while the
// nulling block erases the u-part of earlier injections and the bounded branch
// can move it by at most beta/2. The successor term sigma z_{j-1} makes greedy
// output cycle through the class tokens; c_j = c (1 + 0.01 j / (m - 1)) makes
// an extreme alpha collapse that cycle onto a single repeated token.
struct PlantedSpec {
    int d_model = 8;
    int n_layers = 4;
    int null_block = 2;      // p
    double attenuation = 0.5; // a
    double class_margin = 4.0; // c
    double default_bias = 1.0; // beta
    int n_class_tokens = 2;  // m, per class
    int n_fillers = 6;
    double concept_scale = 1.0; // gamma
    double identity_radius = 0.1; // r
    int max_seq_len = 256;

    void validate() const; // throws invalid_argument
};

struct PlantedTruth {
    std::vector<double> u;
    std::vector<double> e0;
    std::vector<double> w;
    std::vector<double> q1;
    std::vector<double> q2;
    int best_layer = 0;
    int null_block = 0;
    int n_layers = 0;
    double attenuation = 0.0;
    double default_bias = 0.0;
    double branch_gain = 0.0; // beta / 2: the bounded branch's reach at the last layer
    double concept_scale = 0.0;

    std::vector<TokenId> class_a;
    std::vector<TokenId> class_b;
    std::vector<TokenId> fillers;
    TokenId default_token = 0; // greedy prediction after BOS alone

    // Minimal alpha that flips greedy output when injecting u itself at
    // `layer`; +infinity below the null block.
    double alpha_threshold(int layer) const;

    // Same for an arbitrary vector: beta / (<v,u> a^(N-layer)). Infinite
    // below the null block or when <v,u> <= 0.
    double predicted_threshold(std::span<const float> v, int layer) const;

    // Alpha needed to flip a state that already sits on class B, i.e. the
    // last token of an opposite-class prompt: (beta + (beta/2) tanh gamma) / (<v,u> a^(N-layer)).
    double conflict_threshold(std::span<const float> v, int layer) const;

    double projection(std::span<const float> v) const; // <v, u>
    double cosine(std::span<const float> v) const;

    nlohmann::json to_json() const;
};

struct PlantedFixture {
    Model model;
    PlantedTruth truth;
};

PlantedFixture build_planted_model(const PlantedSpec& spec, std::uint64_t seed);

struct PlantedPrompts {
    std::vector<std::string> positives; // filler prefix + class-A suffix
    std::vector<std::string> negatives; // the same sequence with B in place of A
    std::vector<std::string> neutrals;  // fillers only
};

// Suffixes are 4 to 6 class tokens long and follow the successor cycle.
PlantedPrompts make_planted_prompts(const PlantedSpec& spec, int n_per_set, std::uint64_t seed);

// token_class rules labelling class-A words as target and class-B as opposite.
JudgeRules planted_rules(const PlantedSpec& spec, const std::string& task = "planted");

TaskSpec planted_task(const std::string& task = "planted");

// positives -> target, negatives -> opposite, neutrals -> neutral.
std::vector<PromptRecord> planted_records(const PlantedPrompts& prompts, const std::string& task = "planted");

// Vocabulary strings used by the fixture.
std::string planted_class_token(bool class_a, int j);
std::string planted_filler_token(int j);

// Greedy output cycles through the m class tokens of one side. With
// 2m + n - 2 new tokens that cycle scores 1 - m/(2m - 1) < 0.5 on n-gram
// repetition while a collapse onto one token scores 1 - 1/(2m - 1), so the
// default degeneracy threshold separates the two for any m >= 2.
int planted_generation_length(const PlantedSpec& spec, int ngram = 4);

} // namespace steerlab
