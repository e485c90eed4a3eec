#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "lidao/errors.hpp"
#include "lidao/seqcore.hpp"

namespace lidao::toylm {

// ---- model ------------------------------------------------------------------

// Mean-embedding -> tanh hidden layer -> softmax language model.
// The tunable subset during per-token interventions is exactly {b1, b2}.
struct ToyLM {
    int vocab_size = 0;
    int d = 0;               // embedding dim
    int h = 0;               // hidden dim
    int context_window = 4;  // K: mean over the last min(K, len) context tokens

    std::vector<double> embed;  // vocab_size x d, row-major
    std::vector<double> w1;     // h x d
    std::vector<double> b1;     // h
    std::vector<double> w2;     // vocab_size x h
    std::vector<double> b2;     // vocab_size

    std::span<const double> embedding(int token) const {
        return {embed.data() + static_cast<std::size_t>(token) * d, static_cast<std::size_t>(d)};
    }

    void validate() const;  // throws ConfigError

    std::string to_json_string() const;
    static ToyLM from_json_string(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static ToyLM load(const std::filesystem::path& path);
};

// Additive offsets on the two bias vectors; reset to zero at every step.
struct TunableDelta {
    std::vector<double> db1;  // h
    std::vector<double> db2;  // vocab_size

    static TunableDelta zeros(const ToyLM& model) {
        return {std::vector<double>(model.h, 0.0), std::vector<double>(model.vocab_size, 0.0)};
    }
};

// ---- forward ----------------------------------------------------------------

struct ForwardResult {
    std::vector<double> mean_embed;  // d
    std::vector<double> hidden;      // h (post-tanh)
    std::vector<double> logits;      // vocab_size
    seqcore::NextTokenDistribution dist;
};

// context must be nonempty (at least BOS).
ForwardResult forward(const ToyLM& model, const TunableDelta& delta, std::span<const int> context);

// ---- losses over the next-token distribution --------------------------------

// A scalar loss on a next-token distribution with an explicit gradient
// in distribution space.
struct DistributionLoss {
    virtual ~DistributionLoss() = default;
    virtual double value(const seqcore::NextTokenDistribution& dist) const = 0;
    virtual std::vector<double> dist_grad(const seqcore::NextTokenDistribution& dist) const = 0;
};

// L(p) = sum_x p[x] * phi[x]  (the shape of both per-step loss proxies).
struct LinearDistributionLoss final : DistributionLoss {
    std::vector<double> phi;

    explicit LinearDistributionLoss(std::vector<double> phi_) : phi(std::move(phi_)) {}
    double value(const seqcore::NextTokenDistribution& dist) const override;
    std::vector<double> dist_grad(const seqcore::NextTokenDistribution& dist) const override;
};

// L(p) = (sum_x p phi_f) * (sum_x p phi_s): product of two linear losses.
struct ProductDistributionLoss final : DistributionLoss {
    std::vector<double> phi_first;
    std::vector<double> phi_second;

    ProductDistributionLoss(std::vector<double> f, std::vector<double> s)
        : phi_first(std::move(f)), phi_second(std::move(s)) {}
    double value(const seqcore::NextTokenDistribution& dist) const override;
    std::vector<double> dist_grad(const seqcore::NextTokenDistribution& dist) const override;
};

// L(p) = -log p[token] (clamped at 1e-12), the softmax cross-entropy probe.
struct NegLogTokenLoss final : DistributionLoss {
    int token;

    explicit NegLogTokenLoss(int token_) : token(token_) {}
    double value(const seqcore::NextTokenDistribution& dist) const override;
    std::vector<double> dist_grad(const seqcore::NextTokenDistribution& dist) const override;
};

// ---- gradients --------------------------------------------------------------

// Reverse-mode gradient of loss(forward(model, delta, context).dist)
// with respect to (db1, db2). Throws NumericFailureError on non-finite values.
TunableDelta grad_tunable(const ToyLM& model, const TunableDelta& delta,
                          std::span<const int> context, const DistributionLoss& loss);

// ---- likelihood -------------------------------------------------------------

// Sum of log p(x_t | x_<t) over generated positions; -inf when any generated
// token has zero probability. Requires seq.size() >= 2 and >= 1 generated token.
double log_likelihood(const ToyLM& model, const seqcore::TokenSequence& seq);

} // namespace lidao::toylm
