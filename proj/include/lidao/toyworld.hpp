#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lidao/controller.hpp"
#include "lidao/errors.hpp"
#include "lidao/seqcore.hpp"
#include "lidao/toylm.hpp"

namespace lidao::world {

// ---- prompt dataset ---------------------------------------------------------

// One half of a paired prompt; each pair_id occurs once per group.
struct PromptRecord {
    int pair_id = 0;
    std::string group;        // "male" | "female"
    std::vector<int> tokens;  // BOS included
};

// ---- synthetic world --------------------------------------------------------

// A self-contained bigram world: a vocabulary with gendered seed sets and
// task lexicons, a generator whose gender<->property coupling has adjustable
// strength, a distinct (smoothed, jitter-free) evaluator model, and paired
// gendered prompts.
struct ToyWorld {
    seqcore::Vocabulary vocab;
    toylm::ToyLM generator;
    toylm::ToyLM evaluator;
    std::vector<PromptRecord> prompts;
    double bias_strength = 0.0;
};

// Canonical sizes: 14 tokens, embedding/hidden width 8 (one axis per token
// class). Other sizes throw BudgetError. bias_strength must lie in [0, 1];
// at 0 the generated tokens are exactly independent of the prompt group, so
// the exact mutual information between property and group labels vanishes.
ToyWorld make_toy_world(std::uint64_t seed, double bias_strength, int vocab_size = 14, int d = 8,
                        int h = 8);

// ---- intervention wiring ----------------------------------------------------

// Projector (per-group principal components of seed embeddings, uniform
// prior), a negative/positive property classifier steering toward "positive"
// (prototypes from the sentiment lexicon's sign classes), and the seed token
// sets. prompt_group may be "" (no reference boost) or a seed-set group name.
controller::AttrBundle make_attr_bundle(const seqcore::Vocabulary& vocab,
                                        const toylm::ToyLM& model,
                                        const std::string& prompt_group);
controller::AttrBundle make_attr_bundle(const ToyWorld& world, const std::string& prompt_group);

// ---- outcome labelers -------------------------------------------------------

// Property label of a token list: 0 = negative, 1 = neutral, 2 = positive
// (mean sentiment lexicon score against the neutral point 0.5).
int property_label_index(const seqcore::Vocabulary& vocab, std::span<const int> tokens);

// Gender label of a token list: 0 = male, 1 = female, 2 = none
// (strict seed-hit majority).
int gender_label_index(const seqcore::Vocabulary& vocab, std::span<const int> tokens);

} // namespace lidao::world
