#include "lidao/attr.hpp"

#include <algorithm>
#include <cmath>

namespace lidao::attr {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

} // namespace

// ---- validation -------------------------------------------------------------

void GroupProjector::validate() const {
    if (groups.empty()) throw ConfigError("projector needs at least one group");
    if (pcs.size() != groups.size() || prior.size() != groups.size())
        throw ConfigError("projector field sizes disagree");
    double total = 0.0;
    for (double p : prior) {
        if (!(p > 0.0)) throw ConfigError("projector prior entries must be > 0");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("projector prior must sum to 1");
    for (const auto& pc : pcs)
        if (std::abs(norm(pc) - 1.0) > 1e-9)
            throw ConfigError("projector components must be unit norm");
}

void AttributeClassifier::validate() const {
    if (classes.size() < 2) throw ConfigError("classifier needs at least two classes");
    if (protos.size() != classes.size()) throw ConfigError("classifier field sizes disagree");
    if (target_class < 0 || target_class >= static_cast<int>(classes.size()))
        throw ConfigError("classifier target_class out of range");
    for (const auto& p : protos)
        if (std::abs(norm(p) - 1.0) > 1e-9)
            throw ConfigError("classifier prototypes must be unit norm");
}

// ---- principal component ----------------------------------------------------

std::vector<double> principal_component(const std::vector<std::vector<double>>& embeddings) {
    if (embeddings.size() < 2)
        throw DegenerateSeedSetError("principal_component needs >= 2 vectors");
    const std::size_t d = embeddings.front().size();
    for (const auto& e : embeddings)
        if (e.size() != d) throw ConfigError("principal_component: inconsistent dimensions");

    // Mean-center the stack.
    std::vector<double> mean(d, 0.0);
    for (const auto& e : embeddings)
        for (std::size_t k = 0; k < d; ++k) mean[k] += e[k];
    for (double& m : mean) m /= static_cast<double>(embeddings.size());

    // Covariance-scatter matrix C = X^T X of the centered stack.
    std::vector<double> c(d * d, 0.0);
    for (const auto& e : embeddings) {
        for (std::size_t i = 0; i < d; ++i) {
            const double xi = e[i] - mean[i];
            for (std::size_t j = 0; j < d; ++j) c[i * d + j] += xi * (e[j] - mean[j]);
        }
    }
    double frob = 0.0;
    for (double x : c) frob += x * x;
    if (frob <= 1e-24)
        throw DegenerateSeedSetError("principal_component on identical embeddings (rank 0)");

    // Deterministic start vector with a mild index tilt so it is effectively
    // never orthogonal to the leading eigenvector.
    std::vector<double> v(d), next(d);
    for (std::size_t k = 0; k < d; ++k) v[k] = 1.0 + static_cast<double>(k + 1) / (2.0 * d);
    double vn = norm(v);
    for (double& x : v) x /= vn;

    constexpr double tol = 1e-10;
    constexpr int max_iters = 100000;
    for (int iter = 0; iter < max_iters; ++iter) {
        for (std::size_t i = 0; i < d; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += c[i * d + j] * v[j];
            next[i] = s;
        }
        const double nn = norm(next);
        if (nn <= 1e-300) {
            // Start vector fell in the null space; restart off-axis.
            for (std::size_t k = 0; k < d; ++k) v[k] = (k + iter) % 2 ? 1.0 : -0.5;
            vn = norm(v);
            for (double& x : v) x /= vn;
            continue;
        }
        for (double& x : next) x /= nn;
        double diff = 0.0;
        for (std::size_t k = 0; k < d; ++k) diff = std::max(diff, std::abs(next[k] - v[k]));
        v = next;
        if (diff < tol && iter > 0) break;
    }

    // Sign convention: largest-magnitude entry positive.
    std::size_t arg = 0;
    for (std::size_t k = 1; k < d; ++k)
        if (std::abs(v[k]) > std::abs(v[arg])) arg = k;
    if (v[arg] < 0.0)
        for (double& x : v) x = -x;
    const double fn = norm(v);
    for (double& x : v) x /= fn;
    return v;
}

// ---- group posterior --------------------------------------------------------

namespace {

// Clamp-at-zero cosine posterior against a set of unit directions; fallback
// distribution used when every cosine is <= 0 or the input has zero norm.
GroupPosterior cosine_posterior(const std::vector<std::vector<double>>& dirs,
                                std::span<const double> fallback,
                                std::span<const double> e) {
    GroupPosterior out;
    out.probs.assign(dirs.size(), 0.0);
    const double en = norm(e);
    if (en <= 1e-300) {
        out.probs.assign(fallback.begin(), fallback.end());
        out.prior_fallback = true;
        return out;
    }
    double total = 0.0;
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        const double c = dot(e, dirs[k]) / (en * norm(dirs[k]));
        out.probs[k] = std::max(c, 0.0);
        total += out.probs[k];
    }
    if (total <= 0.0) {
        out.probs.assign(fallback.begin(), fallback.end());
        out.prior_fallback = true;
        return out;
    }
    for (double& p : out.probs) p /= total;
    return out;
}

} // namespace

GroupPosterior q_a_token(const GroupProjector& projector, std::span<const double> e) {
    return cosine_posterior(projector.pcs, projector.prior, e);
}

std::vector<double> mean_embedding(const toylm::ToyLM& model, std::span<const int> tokens) {
    std::vector<double> m(model.d, 0.0);
    if (tokens.empty()) return m;
    for (int tok : tokens) {
        const auto e = model.embedding(tok);
        for (int k = 0; k < model.d; ++k) m[k] += e[k];
    }
    for (double& x : m) x /= static_cast<double>(tokens.size());
    return m;
}

GroupPosterior q_a_prefix(const GroupProjector& projector, const toylm::ToyLM& model,
                          std::span<const int> prefix) {
    if (prefix.empty()) throw ConfigError("q_a_prefix requires >= 1 token");
    const auto m = mean_embedding(model, prefix);
    return q_a_token(projector, m);
}

// ---- divergences ------------------------------------------------------------

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        s += p[i] * std::log(std::max(p[i], 1e-12) / std::max(q[i], 1e-12));
    }
    return s;
}

// ---- loss proxies -----------------------------------------------------------

std::vector<double> loss_a_phi(const GroupProjector& projector, const toylm::ToyLM& model,
                               std::span<const int> gen_prefix) {
    const std::size_t n_groups = projector.groups.size();
    std::vector<double> phi(model.vocab_size, 0.0);

    // Running sum of prefix embeddings; each candidate extends it by one token.
    std::vector<double> prefix_sum(model.d, 0.0);
    for (int tok : gen_prefix) {
        const auto e = model.embedding(tok);
        for (int k = 0; k < model.d; ++k) prefix_sum[k] += e[k];
    }
    const double ext_len = static_cast<double>(gen_prefix.size() + 1);

    std::vector<double> ext_mean(model.d, 0.0);
    for (int x = 0; x < model.vocab_size; ++x) {
        const auto ex = model.embedding(x);
        for (int k = 0; k < model.d; ++k) ext_mean[k] = (prefix_sum[k] + ex[k]) / ext_len;

        const GroupPosterior q_tok = q_a_token(projector, ex);
        const GroupPosterior q_pref = q_a_token(projector, ext_mean);

        double term1 = kl_divergence(q_pref.probs, q_tok.probs);
        double term2 = 0.0;
        for (std::size_t k = 0; k < n_groups; ++k) {
            const double q = q_tok.probs[k];
            if (q <= 0.0) continue;
            term2 += projector.prior[k] * q * std::log(std::max(q, 1e-12) / projector.prior[k]);
        }
        phi[x] = term1 + term2;
    }
    return phi;
}

std::vector<double> loss_g_phi(const AttributeClassifier& classifier, const toylm::ToyLM& model,
                               std::span<const int> gen_prefix) {
    std::vector<double> phi(model.vocab_size, 0.0);
    const std::vector<double> uniform(classifier.classes.size(),
                                      1.0 / static_cast<double>(classifier.classes.size()));

    std::vector<double> prefix_sum(model.d, 0.0);
    for (int tok : gen_prefix) {
        const auto e = model.embedding(tok);
        for (int k = 0; k < model.d; ++k) prefix_sum[k] += e[k];
    }
    const double ext_len = static_cast<double>(gen_prefix.size() + 1);

    std::vector<double> ext_mean(model.d, 0.0);
    for (int x = 0; x < model.vocab_size; ++x) {
        const auto ex = model.embedding(x);
        for (int k = 0; k < model.d; ++k) ext_mean[k] = (prefix_sum[k] + ex[k]) / ext_len;
        const GroupPosterior qg = cosine_posterior(classifier.protos, uniform, ext_mean);
        phi[x] = -std::log(std::max(qg.probs[classifier.target_class], 1e-12));
    }
    return phi;
}

double loss_a(const GroupProjector& projector, const seqcore::NextTokenDistribution& dist,
              const toylm::ToyLM& model, std::span<const int> gen_prefix) {
    const auto phi = loss_a_phi(projector, model, gen_prefix);
    double s = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) s += dist.probs[i] * phi[i];
    return s;
}

double loss_g(const AttributeClassifier& classifier, const seqcore::NextTokenDistribution& dist,
              const toylm::ToyLM& model, std::span<const int> gen_prefix) {
    const auto phi = loss_g_phi(classifier, model, gen_prefix);
    double s = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) s += dist.probs[i] * phi[i];
    return s;
}

// ---- rescale weight ---------------------------------------------------------

double decay_weight(std::span<const double> history, double gamma) {
    if (history.empty()) throw ConfigError("decay_weight requires a nonempty history");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
    double num = 0.0, den = 0.0, g = gamma;
    // Most recent entry first: history.back() carries weight gamma^1.
    for (std::size_t j = 0; j < history.size(); ++j) {
        num += history[history.size() - 1 - j] * g;
        den += g;
        g *= gamma;
    }
    return num / den;
}

} // namespace lidao::attr
