#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lidao/errors.hpp"
#include "lidao/toylm.hpp"

namespace lidao::infoth {

// Probability floor inside logarithms and the enumeration pruning threshold.
inline constexpr double kLogFloor = 1e-12;
inline constexpr double kPruneFloor = 1e-15;

// ---- dense joint over a product of finite axes ------------------------------

// Row-major dense joint PMF over a product of small finite axes. A rank-0
// joint is the scalar 1 (useful as the empty-conditioning marginal).
class Joint {
public:
    Joint() : dims_{}, p_{1.0} {}
    explicit Joint(std::vector<std::size_t> dims);
    static Joint from_flat(std::vector<std::size_t> dims, std::vector<double> probs,
                           double tol = 1e-9);

    std::size_t rank() const { return dims_.size(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t cells() const { return p_.size(); }

    double& at(std::span<const std::size_t> idx);
    double at(std::span<const std::size_t> idx) const;
    std::vector<double>& flat() { return p_; }
    const std::vector<double>& flat() const { return p_; }

    double total() const;
    void normalize();  // throws DegenerateDistributionError on zero mass

    // Marginal over the listed axes, in the listed order.
    Joint marginal(std::span<const std::size_t> keep_axes) const;

private:
    std::vector<std::size_t> dims_;
    std::vector<double> p_;
    std::size_t offset(std::span<const std::size_t> idx) const;
};

// ---- information quantities (nats) ------------------------------------------

double entropy(std::span<const double> p);
double entropy(const Joint& joint);
double entropy(const Joint& joint, std::span<const std::size_t> axes);

double cond_entropy(const Joint& joint, std::span<const std::size_t> x_axes,
                    std::span<const std::size_t> given_axes);

// Definitional sums; the *_entropy_route variants recompute the same quantity
// from entropy identities for cross-checking.
double mutual_info(const Joint& joint, std::span<const std::size_t> x_axes,
                   std::span<const std::size_t> y_axes);
double mutual_info_entropy_route(const Joint& joint, std::span<const std::size_t> x_axes,
                                 std::span<const std::size_t> y_axes);
double cond_mutual_info(const Joint& joint, std::span<const std::size_t> x_axes,
                        std::span<const std::size_t> y_axes,
                        std::span<const std::size_t> z_axes);
double cond_mutual_info_entropy_route(const Joint& joint, std::span<const std::size_t> x_axes,
                                      std::span<const std::size_t> y_axes,
                                      std::span<const std::size_t> z_axes);

// Variation of information H(X) + H(Y) - 2 I(X;Y).
double vi_distance(const Joint& joint, std::span<const std::size_t> x_axes,
                   std::span<const std::size_t> y_axes);

// ---- identity / bound checks ------------------------------------------------

// |[I(g;a|x_<t+1) - I(g;a|x_<t)] - [I(g;x_t|x_<t,a) - I(g;x_t|x_<t)]| on a
// joint whose axes are (g, a, x_1..x_T); t is 1-based.
double lemma_residual(const Joint& joint, std::size_t g_axis, std::size_t a_axis,
                      std::span<const std::size_t> x_axes, std::size_t t);

struct TheoremCheckResult {
    std::vector<double> step_min;  // per step: min(I(g;x_t|x_<t), I(a;x_t|x_<t))
    double max_step_min = 0.0;
    double mi_ga = 0.0;  // I(g;a)
};

// Per-step sufficiency condition and final dependence on a (g, a, x_1..x_T) joint.
TheoremCheckResult theorem_check(const Joint& joint, std::size_t g_axis, std::size_t a_axis,
                                 std::span<const std::size_t> x_axes);

// Randomized interleaved process: odd positions evolve on odd history only,
// even positions on even history only; g indexes the odd subsequence and a the
// even one. Satisfies the per-step condition by construction.
struct InterleavedSpec {
    int T = 4;
    int V = 2;
    std::uint64_t seed = 0;
};
Joint build_interleaved_joint(const InterleavedSpec& spec);  // axes: g, a, x_1..x_T

struct PropositionCheckResult {
    double lhs = 0.0;    // I(g ; a_joint)
    double rhs = 0.0;    // I(g ; a_gen) + H(a_joint | a_gen)
    double slack = 0.0;  // rhs - lhs
};

// Coarsening bound on a joint with axes (g, a_joint, a_gen).
PropositionCheckResult proposition_check(const Joint& labels_joint);

// ---- sequence enumeration ---------------------------------------------------

// Enumerated outcome set of an autoregressive process: the generated token
// vectors (EOS-terminated or full length) with their exact probabilities.
struct SequenceEnsemble {
    std::vector<std::vector<int>> outcomes;
    std::vector<double> probs;

    double total_mass() const;
};

// Size guard shared by every enumerator: V^T must not exceed 10^7.
void check_enumeration_budget(int vocab_size, int max_len);

// next_fn maps a full context (initial context + generated so far) to a
// next-token probability vector. eos_id < 0 disables EOS termination.
using StepDistributionFn =
    std::function<std::vector<double>(const std::vector<int>& context)>;

SequenceEnsemble enumerate_process(const StepDistributionFn& next_fn, int vocab_size,
                                   const std::vector<int>& initial_context, int max_len,
                                   int eos_id, double prune = kPruneFloor);

// Chain-rule enumeration of the raw model from the given context.
SequenceEnsemble enumerate_model(const toylm::ToyLM& model, const std::vector<int>& context,
                                 int max_len, int eos_id, double prune = kPruneFloor);

// Dense joint over labels computed from an ensemble. labelers[i] maps an
// outcome to a value in [0, label_dims[i]).
Joint label_joint(const SequenceEnsemble& ensemble,
                  const std::vector<std::function<std::size_t(const std::vector<int>&)>>& labelers,
                  const std::vector<std::size_t>& label_dims);

} // namespace lidao::infoth
