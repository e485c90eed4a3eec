#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lidao/attr.hpp"
#include "lidao/errors.hpp"
#include "lidao/infoth.hpp"
#include "lidao/seqcore.hpp"
#include "lidao/toylm.hpp"

namespace lidao::controller {

// ---- configuration ----------------------------------------------------------

enum class Method {
    none,
    g_only,
    a_only,
    uddia_sum,
    lidao_min,
    lidao_prod,
    elidao_min,
    elidao_prod,
};

Method method_from_string(const std::string& name);  // throws ConfigError
std::string method_to_string(Method method);
bool is_elidao(Method method);

struct InterventionConfig {
    Method method = Method::none;
    double tau = 0.9;    // geometric mixing weight on the tuned distribution
    double gamma = 0.5;  // decay of the loss-rescaling weights
    double lr = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int max_len = 20;
    double elidao_boost = 2.0;  // reference-model logit boost on prompt-group seeds

    void validate() const;  // throws ConfigError
};

// ---- traces -----------------------------------------------------------------

enum class Chosen { none, g_option, a_option, both, product };
std::string chosen_to_string(Chosen chosen);

struct StepRecord {
    double lg = 0.0;
    double la = 0.0;
    double wg = 1.0;
    double wa = 1.0;
    Chosen chosen = Chosen::none;
};

struct LossTrace {
    std::vector<StepRecord> steps;
};

enum class TerminatedBy { eos, max_len };

struct GenerationRecord {
    seqcore::TokenSequence prompt;  // BOS + prompt tokens
    seqcore::TokenSequence output;  // generated tokens (EOS included when drawn)
    LossTrace trace;
    double ppl = 0.0;  // filled by the evaluation stage
    TerminatedBy terminated_by = TerminatedBy::max_len;

    // prompt followed by output, with per-position origins.
    seqcore::TokenSequence full_sequence() const;
};

// ---- primitive steps --------------------------------------------------------

// Scalar objective for the step and which option the schedule chose.
//   lidao_min/elidao_min -> min(lg/wg, la/wa), ties to the g option
//   lidao_prod/elidao_prod -> lg * la (raw losses, no rescale)
//   uddia_sum -> lg + la;  g_only -> lg;  a_only -> la;  none -> 0
std::pair<double, Chosen> step_loss(Method method, double lg, double la, double wg, double wa);

// One Adam step from fresh (zero) moment state with bias correction:
//   delta_i = -lr * g_i / (|g_i| + eps * sqrt(1 - beta2))
std::vector<double> adam_single_step(std::span<const double> grad, double lr, double beta1,
                                     double beta2, double eps);

// Geometric mixture p_tuned^tau * p_base^(1-tau), renormalized. The tau = 0
// and tau = 1 endpoints return the corresponding input exactly.
seqcore::NextTokenDistribution mix_distributions(const seqcore::NextTokenDistribution& tuned,
                                                 const seqcore::NextTokenDistribution& base,
                                                 double tau);

// Replace the masses of seed_union tokens with the reference values, keep the
// rest, renormalize.
seqcore::NextTokenDistribution elidao_override(const seqcore::NextTokenDistribution& mix,
                                               const seqcore::NextTokenDistribution& ref,
                                               std::span<const int> seed_union);

// Untuned forward with +boost on the logits of the prompt group's seed tokens;
// the untuned distribution when the group token list is empty.
seqcore::NextTokenDistribution reference_distribution(const toylm::ToyLM& model,
                                                      std::span<const int> context,
                                                      std::span<const int> group_seed_tokens,
                                                      double boost);

// ---- per-step pipeline ------------------------------------------------------

// Everything the intervention needs beyond the model: group projector, the
// property classifier, and the vocabulary seed-token sets.
struct AttrBundle {
    attr::GroupProjector projector;
    attr::AttributeClassifier classifier;
    std::vector<int> seed_union;          // all seed tokens (the override set)
    std::vector<int> prompt_group_seeds;  // seeds of the prompt's group ({} = none)
};

struct StepOutcome {
    seqcore::NextTokenDistribution final_dist;  // what the sampler draws from
    StepRecord record;
};

// One full step of the intervention on a given sequence state: base forward,
// loss proxies, single Adam step on {b1, b2}, tuned forward, mixing, optional
// seed-word override, then the sampling transforms. Pure: no RNG, no mutation.
StepOutcome intervention_step(const toylm::ToyLM& model, const AttrBundle& bundle,
                              const InterventionConfig& icfg, const seqcore::SamplingConfig& scfg,
                              const seqcore::TokenSequence& seq, std::span<const double> lg_hist,
                              std::span<const double> la_hist);

// ---- generation -------------------------------------------------------------

// Decode up to max_len tokens (stopping after EOS), sampling each step from
// the post-intervention distribution. The base model is never mutated.
GenerationRecord generate(const toylm::ToyLM& model, const AttrBundle& bundle,
                          const InterventionConfig& icfg, const seqcore::SamplingConfig& scfg,
                          std::span<const int> prompt_tokens, int eos_id, std::mt19937_64& rng);

// Exact enumeration of the generation process induced by the intervention:
// every reachable generated sequence with its exact probability, using the
// same per-step pipeline as generate().
infoth::SequenceEnsemble enumerate_generation(const toylm::ToyLM& model, const AttrBundle& bundle,
                                              const InterventionConfig& icfg,
                                              const seqcore::SamplingConfig& scfg,
                                              std::span<const int> prompt_tokens, int eos_id,
                                              double prune = infoth::kPruneFloor);

} // namespace lidao::controller
