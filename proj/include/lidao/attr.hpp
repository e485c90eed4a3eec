#pragma once

#include <span>
#include <string>
#include <vector>

#include "lidao/errors.hpp"
#include "lidao/seqcore.hpp"
#include "lidao/toylm.hpp"

namespace lidao::attr {

// ---- projector / classifier -------------------------------------------------

// Group-direction projector: one unit-norm principal component per group plus
// a prior p(a) over groups.
struct GroupProjector {
    std::vector<std::string> groups;
    std::vector<std::vector<double>> pcs;  // per group, unit L2 norm
    std::vector<double> prior;             // > 0, sums to 1

    void validate() const;  // throws ConfigError
};

// Prototype classifier for the global property g (sentiment/regard/toxicity
// classes); target_class indexes the class the intervention steers toward.
struct AttributeClassifier {
    std::vector<std::string> classes;
    std::vector<std::vector<double>> protos;  // per class, unit L2 norm
    int target_class = 0;

    void validate() const;  // throws ConfigError
};

// ---- principal component ----------------------------------------------------

// Unit-norm first right-singular vector of the mean-centered stack, via power
// iteration to relative tolerance 1e-10; sign fixed so the largest-magnitude
// entry is positive. Throws DegenerateSeedSetError on rank-0 input.
std::vector<double> principal_component(const std::vector<std::vector<double>>& embeddings);

// ---- group posterior --------------------------------------------------------

struct GroupPosterior {
    std::vector<double> probs;
    bool prior_fallback = false;  // all cosines clamped (or zero-norm input)
};

// q_k = max(cos(e, pc_k), 0) / sum_j max(cos(e, pc_j), 0); prior when all
// cosines are <= 0 or the embedding has zero norm.
GroupPosterior q_a_token(const GroupProjector& projector, std::span<const double> e);

// Same rule applied to the mean embedding of a token prefix.
GroupPosterior q_a_prefix(const GroupProjector& projector, const toylm::ToyLM& model,
                          std::span<const int> prefix);

// Mean embedding of a token list (zero vector for an empty list).
std::vector<double> mean_embedding(const toylm::ToyLM& model, std::span<const int> tokens);

// ---- per-step loss proxies --------------------------------------------------

// Per-candidate integrand of the group-information loss:
//   phi[x] = KL(q(a | prefix + x) || q(a | x))
//          + sum_k prior_k * q(a=k | x) * log(q(a=k | x) / prior_k)
// where the prefix covers the tokens generated so far.
std::vector<double> loss_a_phi(const GroupProjector& projector, const toylm::ToyLM& model,
                               std::span<const int> gen_prefix);

// Per-candidate integrand of the property loss:
//   phi[x] = -log q_g(target_class | prefix + x)   (clamped at 1e-12)
std::vector<double> loss_g_phi(const AttributeClassifier& classifier, const toylm::ToyLM& model,
                               std::span<const int> gen_prefix);

// Expectations of the integrands under the next-token distribution.
double loss_a(const GroupProjector& projector, const seqcore::NextTokenDistribution& dist,
              const toylm::ToyLM& model, std::span<const int> gen_prefix);
double loss_g(const AttributeClassifier& classifier, const seqcore::NextTokenDistribution& dist,
              const toylm::ToyLM& model, std::span<const int> gen_prefix);

// ---- rescale weight ---------------------------------------------------------

// Decay-weighted mean of past losses (chronological order, most recent gets
// gamma^1). History must be nonempty; callers use w = 1 before any history.
double decay_weight(std::span<const double> history, double gamma);

// KL(p || q) with a 1e-12 clamp floor inside the log; 0 log 0 = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

} // namespace lidao::attr
