#include "lidao/infoth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace lidao::infoth {

// ---- Joint ------------------------------------------------------------------

Joint::Joint(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    std::size_t n = 1;
    for (std::size_t d : dims_) {
        if (d == 0) throw ConfigError("joint axis of size 0");
        n *= d;
    }
    p_.assign(n, 0.0);
}

Joint Joint::from_flat(std::vector<std::size_t> dims, std::vector<double> probs, double tol) {
    Joint j(std::move(dims));
    if (probs.size() != j.p_.size()) throw ConfigError("joint flat size mismatch");
    j.p_ = std::move(probs);
    double sum = 0.0;
    for (double p : j.p_) {
        if (!(p >= 0.0)) throw ConfigError("joint probabilities must be nonnegative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > tol) throw ConfigError("joint probabilities must sum to 1");
    return j;
}

std::size_t Joint::offset(std::span<const std::size_t> idx) const {
    std::size_t o = 0;
    for (std::size_t k = 0; k < dims_.size(); ++k) o = o * dims_[k] + idx[k];
    return o;
}

double& Joint::at(std::span<const std::size_t> idx) { return p_[offset(idx)]; }
double Joint::at(std::span<const std::size_t> idx) const { return p_[offset(idx)]; }

double Joint::total() const {
    double s = 0.0;
    for (double p : p_) s += p;
    return s;
}

void Joint::normalize() {
    const double s = total();
    if (!(s > 0.0)) throw DegenerateDistributionError("joint has zero total mass");
    for (double& p : p_) p /= s;
}

Joint Joint::marginal(std::span<const std::size_t> keep_axes) const {
    std::vector<std::size_t> kd;
    kd.reserve(keep_axes.size());
    for (std::size_t a : keep_axes) {
        if (a >= dims_.size()) throw ConfigError("marginal axis out of range");
        kd.push_back(dims_[a]);
    }
    Joint out(kd.empty() ? std::vector<std::size_t>{} : kd);
    if (keep_axes.empty()) {
        out.p_[0] = total();
        return out;
    }
    std::vector<std::size_t> idx(dims_.size(), 0);
    std::vector<std::size_t> kidx(keep_axes.size(), 0);
    for (std::size_t cell = 0; cell < p_.size(); ++cell) {
        // Decode the row-major cell index.
        std::size_t rem = cell;
        for (std::size_t k = dims_.size(); k-- > 0;) {
            idx[k] = rem % dims_[k];
            rem /= dims_[k];
        }
        for (std::size_t k = 0; k < keep_axes.size(); ++k) kidx[k] = idx[keep_axes[k]];
        out.at(kidx) += p_[cell];
    }
    return out;
}

// ---- entropies --------------------------------------------------------------

double entropy(std::span<const double> p) {
    double s = 0.0;
    for (double x : p) {
        if (x <= 0.0) continue;
        s -= x * std::log(std::max(x, kLogFloor));
    }
    return s;
}

double entropy(const Joint& joint) { return entropy(joint.flat()); }

double entropy(const Joint& joint, std::span<const std::size_t> axes) {
    return entropy(joint.marginal(axes).flat());
}

namespace {

std::vector<std::size_t> cat(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    std::vector<std::size_t> out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

} // namespace

double cond_entropy(const Joint& joint, std::span<const std::size_t> x_axes,
                    std::span<const std::size_t> given_axes) {
    // H(X|Y) = H(X,Y) - H(Y).
    return entropy(joint, cat(x_axes, given_axes)) - entropy(joint, given_axes);
}

// ---- mutual information -----------------------------------------------------

double cond_mutual_info(const Joint& joint, std::span<const std::size_t> x_axes,
                        std::span<const std::size_t> y_axes,
                        std::span<const std::size_t> z_axes) {
    // Work inside the (X, Y, Z) marginal; definitional sum
    //   I(X;Y|Z) = sum p(x,y,z) log[ p(x,y,z) p(z) / (p(x,z) p(y,z)) ].
    const auto xyz_axes = cat(cat(x_axes, y_axes), z_axes);
    const Joint m = joint.marginal(xyz_axes);

    std::vector<std::size_t> xz, yz, z;
    const std::size_t nx = x_axes.size(), ny = y_axes.size(), nz = z_axes.size();
    for (std::size_t i = 0; i < nx; ++i) xz.push_back(i);
    for (std::size_t i = 0; i < nz; ++i) xz.push_back(nx + ny + i);
    for (std::size_t i = 0; i < ny; ++i) yz.push_back(nx + i);
    for (std::size_t i = 0; i < nz; ++i) yz.push_back(nx + ny + i);
    for (std::size_t i = 0; i < nz; ++i) z.push_back(nx + ny + i);

    const Joint mxz = m.marginal(xz);
    const Joint myz = m.marginal(yz);
    const Joint mz = m.marginal(z);

    const auto& dims = m.dims();
    std::vector<std::size_t> idx(dims.size(), 0);
    std::vector<std::size_t> ixz(xz.size(), 0), iyz(yz.size(), 0), iz(z.size(), 0);
    double s = 0.0;
    for (std::size_t cell = 0; cell < m.cells(); ++cell) {
        std::size_t rem = cell;
        for (std::size_t k = dims.size(); k-- > 0;) {
            idx[k] = rem % dims[k];
            rem /= dims[k];
        }
        const double pxyz = m.flat()[cell];
        if (pxyz <= 0.0) continue;
        for (std::size_t k = 0; k < xz.size(); ++k) ixz[k] = idx[xz[k]];
        for (std::size_t k = 0; k < yz.size(); ++k) iyz[k] = idx[yz[k]];
        for (std::size_t k = 0; k < z.size(); ++k) iz[k] = idx[z[k]];
        const double pxz = mxz.at(ixz);
        const double pyz = myz.at(iyz);
        const double pz = mz.at(iz);
        s += pxyz * std::log(std::max(pxyz * pz, kLogFloor * kLogFloor) /
                             std::max(pxz * pyz, kLogFloor * kLogFloor));
    }
    return s;
}

double mutual_info(const Joint& joint, std::span<const std::size_t> x_axes,
                   std::span<const std::size_t> y_axes) {
    return cond_mutual_info(joint, x_axes, y_axes, {});
}

double mutual_info_entropy_route(const Joint& joint, std::span<const std::size_t> x_axes,
                                 std::span<const std::size_t> y_axes) {
    return entropy(joint, x_axes) + entropy(joint, y_axes) - entropy(joint, cat(x_axes, y_axes));
}

double cond_mutual_info_entropy_route(const Joint& joint, std::span<const std::size_t> x_axes,
                                      std::span<const std::size_t> y_axes,
                                      std::span<const std::size_t> z_axes) {
    return entropy(joint, cat(x_axes, z_axes)) + entropy(joint, cat(y_axes, z_axes)) -
           entropy(joint, z_axes) - entropy(joint, cat(cat(x_axes, y_axes), z_axes));
}

double vi_distance(const Joint& joint, std::span<const std::size_t> x_axes,
                   std::span<const std::size_t> y_axes) {
    return entropy(joint, x_axes) + entropy(joint, y_axes) -
           2.0 * mutual_info(joint, x_axes, y_axes);
}

// ---- lemma / theorem / proposition ------------------------------------------

double lemma_residual(const Joint& joint, std::size_t g_axis, std::size_t a_axis,
                      std::span<const std::size_t> x_axes, std::size_t t) {
    if (t < 1 || t > x_axes.size()) throw ConfigError("lemma_residual: t out of range");
    const std::vector<std::size_t> g{g_axis};
    const std::vector<std::size_t> a{a_axis};
    const std::vector<std::size_t> xt{x_axes[t - 1]};
    const std::vector<std::size_t> past(x_axes.begin(), x_axes.begin() + (t - 1));
    const std::vector<std::size_t> past_next(x_axes.begin(), x_axes.begin() + t);
    const std::vector<std::size_t> past_and_a = cat(past, a);

    const double lhs = cond_mutual_info(joint, g, a, past_next) - cond_mutual_info(joint, g, a, past);
    const double rhs =
        cond_mutual_info(joint, g, xt, past_and_a) - cond_mutual_info(joint, g, xt, past);
    return std::abs(lhs - rhs);
}

TheoremCheckResult theorem_check(const Joint& joint, std::size_t g_axis, std::size_t a_axis,
                                 std::span<const std::size_t> x_axes) {
    TheoremCheckResult res;
    const std::vector<std::size_t> g{g_axis};
    const std::vector<std::size_t> a{a_axis};
    for (std::size_t t = 1; t <= x_axes.size(); ++t) {
        const std::vector<std::size_t> xt{x_axes[t - 1]};
        const std::vector<std::size_t> past(x_axes.begin(), x_axes.begin() + (t - 1));
        const double ig = cond_mutual_info(joint, g, xt, past);
        const double ia = cond_mutual_info(joint, a, xt, past);
        res.step_min.push_back(std::min(ig, ia));
    }
    for (double v : res.step_min) res.max_step_min = std::max(res.max_step_min, v);
    res.mi_ga = mutual_info(joint, g, a);
    return res;
}

Joint build_interleaved_joint(const InterleavedSpec& spec) {
    if (spec.T < 2 || spec.V < 2) throw ConfigError("interleaved construction needs T, V >= 2");
    check_enumeration_budget(spec.V, spec.T);
    std::mt19937_64 rng(spec.seed);
    auto rnd_dist = [&](std::size_t n) {
        std::vector<double> p(n);
        double s = 0.0;
        for (double& x : p) {
            x = 0.05 + std::ldexp(static_cast<double>(rng() >> 11), -53);
            s += x;
        }
        for (double& x : p) x /= s;
        return p;
    };

    const std::size_t n_odd = static_cast<std::size_t>((spec.T + 1) / 2);
    const std::size_t n_even = static_cast<std::size_t>(spec.T / 2);
    const std::size_t g_dim = static_cast<std::size_t>(std::pow(spec.V, n_odd));
    const std::size_t a_dim = static_cast<std::size_t>(std::pow(spec.V, n_even));

    // Conditional tables keyed by the flattened same-parity history.
    // odd_table[h] and even_table[h] are distributions over the next symbol.
    std::vector<std::vector<std::vector<double>>> odd_table(n_odd), even_table(n_even);
    for (std::size_t i = 0, states = 1; i < n_odd; ++i, states *= spec.V) {
        odd_table[i].resize(states);
        for (auto& p : odd_table[i]) p = rnd_dist(spec.V);
    }
    for (std::size_t i = 0, states = 1; i < n_even; ++i, states *= spec.V) {
        even_table[i].resize(states);
        for (auto& p : even_table[i]) p = rnd_dist(spec.V);
    }

    std::vector<std::size_t> dims{g_dim, a_dim};
    for (int t = 0; t < spec.T; ++t) dims.push_back(static_cast<std::size_t>(spec.V));
    Joint joint(dims);

    // Enumerate all sequences; g and a are the flattened parity subsequences.
    std::vector<std::size_t> seq(spec.T, 0);
    std::vector<std::size_t> idx(2 + spec.T, 0);
    const std::size_t n_seq = static_cast<std::size_t>(std::pow(spec.V, spec.T));
    for (std::size_t code = 0; code < n_seq; ++code) {
        std::size_t rem = code;
        for (int t = spec.T; t-- > 0;) {
            seq[t] = rem % spec.V;
            rem /= spec.V;
        }
        double prob = 1.0;
        std::size_t odd_hist = 0, even_hist = 0, odd_i = 0, even_i = 0;
        for (int t = 0; t < spec.T; ++t) {
            if (t % 2 == 0) {  // positions 1,3,5,... (1-based odd)
                prob *= odd_table[odd_i][odd_hist][seq[t]];
                odd_hist = odd_hist * spec.V + seq[t];
                ++odd_i;
            } else {
                prob *= even_table[even_i][even_hist][seq[t]];
                even_hist = even_hist * spec.V + seq[t];
                ++even_i;
            }
        }
        idx[0] = odd_hist;   // flattened odd subsequence = g label
        idx[1] = even_hist;  // flattened even subsequence = a label
        for (int t = 0; t < spec.T; ++t) idx[2 + t] = seq[t];
        joint.at(idx) += prob;
    }
    return joint;
}

PropositionCheckResult proposition_check(const Joint& labels_joint) {
    if (labels_joint.rank() != 3)
        throw ConfigError("proposition_check expects a (g, a_joint, a_gen) joint");
    const std::vector<std::size_t> g{0}, aj{1}, ag{2};
    PropositionCheckResult res;
    res.lhs = mutual_info(labels_joint, g, aj);
    res.rhs = mutual_info(labels_joint, g, ag) + cond_entropy(labels_joint, aj, ag);
    res.slack = res.rhs - res.lhs;
    return res;
}

// ---- enumeration ------------------------------------------------------------

double SequenceEnsemble::total_mass() const {
    double s = 0.0;
    for (double p : probs) s += p;
    return s;
}

void check_enumeration_budget(int vocab_size, int max_len) {
    double count = 1.0;
    for (int t = 0; t < max_len; ++t) {
        count *= static_cast<double>(vocab_size);
        if (count > 1e7)
            throw BudgetError("enumeration budget exceeded: |V|^T > 1e7 for |V|=" +
                              std::to_string(vocab_size) + ", T=" + std::to_string(max_len));
    }
}

namespace {

void enumerate_rec(const StepDistributionFn& next_fn, int vocab_size, int eos_id, int max_len,
                   double prune, std::vector<int>& context, std::vector<int>& generated,
                   double path_prob, SequenceEnsemble& out) {
    if (static_cast<int>(generated.size()) == max_len) {
        out.outcomes.push_back(generated);
        out.probs.push_back(path_prob);
        return;
    }
    const std::vector<double> p = next_fn(context);
    if (static_cast<int>(p.size()) != vocab_size)
        throw ConfigError("enumerate_process: distribution size mismatch");
    for (int tok = 0; tok < vocab_size; ++tok) {
        const double q = path_prob * p[tok];
        if (q < prune) continue;
        generated.push_back(tok);
        context.push_back(tok);
        if (tok == eos_id) {
            out.outcomes.push_back(generated);
            out.probs.push_back(q);
        } else {
            enumerate_rec(next_fn, vocab_size, eos_id, max_len, prune, context, generated, q, out);
        }
        context.pop_back();
        generated.pop_back();
    }
}

} // namespace

SequenceEnsemble enumerate_process(const StepDistributionFn& next_fn, int vocab_size,
                                   const std::vector<int>& initial_context, int max_len,
                                   int eos_id, double prune) {
    if (max_len < 1) throw ConfigError("enumerate_process: max_len must be >= 1");
    check_enumeration_budget(vocab_size, max_len);
    SequenceEnsemble out;
    std::vector<int> context = initial_context;
    std::vector<int> generated;
    enumerate_rec(next_fn, vocab_size, eos_id, max_len, prune, context, generated, 1.0, out);
    return out;
}

SequenceEnsemble enumerate_model(const toylm::ToyLM& model, const std::vector<int>& context,
                                 int max_len, int eos_id, double prune) {
    const toylm::TunableDelta zero = toylm::TunableDelta::zeros(model);
    StepDistributionFn fn = [&model, &zero](const std::vector<int>& ctx) {
        return toylm::forward(model, zero, ctx).dist.probs;
    };
    return enumerate_process(fn, model.vocab_size, context, max_len, eos_id, prune);
}

Joint label_joint(const SequenceEnsemble& ensemble,
                  const std::vector<std::function<std::size_t(const std::vector<int>&)>>& labelers,
                  const std::vector<std::size_t>& label_dims) {
    if (labelers.size() != label_dims.size())
        throw ConfigError("label_joint: labelers/dims size mismatch");
    Joint joint(label_dims);
    std::vector<std::size_t> idx(labelers.size(), 0);
    for (std::size_t i = 0; i < ensemble.outcomes.size(); ++i) {
        for (std::size_t k = 0; k < labelers.size(); ++k) {
            idx[k] = labelers[k](ensemble.outcomes[i]);
            if (idx[k] >= label_dims[k]) throw ConfigError("label_joint: label out of range");
        }
        joint.at(idx) += ensemble.probs[i];
    }
    // Enumeration pruning can shave a little mass; renormalize so the
    // label joint is a proper distribution.
    joint.normalize();
    return joint;
}

} // namespace lidao::infoth
