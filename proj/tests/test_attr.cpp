#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lidao/attr.hpp"
#include "lidao/errors.hpp"
#include "lidao/toylm.hpp"

using namespace lidao;

namespace {

attr::GroupProjector axis_projector() {
    attr::GroupProjector p;
    p.groups = {"ga", "gb"};
    p.pcs = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    p.prior = {0.5, 0.5};
    p.validate();
    return p;
}

attr::AttributeClassifier axis_classifier(int target) {
    attr::AttributeClassifier c;
    c.classes = {"neg", "pos"};
    c.protos = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
    c.target_class = target;
    c.validate();
    return c;
}

// d=3 model whose embeddings are the unit axes (and one diagonal).
toylm::ToyLM axis_model() {
    toylm::ToyLM m;
    m.vocab_size = 4;
    m.d = 3;
    m.h = 1;
    m.context_window = 4;
    const double r = 1.0 / std::sqrt(2.0);
    m.embed = {1.0, 0.0, 0.0,   // token 0: first axis
               0.0, 1.0, 0.0,   // token 1: second axis
               0.0, 0.0, 1.0,   // token 2: off both directions
               r,   r,   0.0};  // token 3: diagonal
    m.w1 = {0.0, 0.0, 0.0};
    m.b1 = {0.0};
    m.w2 = {0.0, 0.0, 0.0, 0.0};
    m.b2 = {0.0, 0.0, 0.0, 0.0};
    m.validate();
    return m;
}

double rayleigh(const std::vector<double>& c, const std::vector<double>& v) {
    const std::size_t d = v.size();
    double num = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double cv = 0.0;
        for (std::size_t j = 0; j < d; ++j) cv += c[i * d + j] * v[j];
        num += v[i] * cv;
    }
    return num;
}

} // namespace

TEST_CASE("projector and classifier validation") {
    CHECK_NOTHROW(axis_projector().validate());
    auto p = axis_projector();
    p.prior = {0.9, 0.2};
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = axis_projector();
    p.pcs[0] = {2.0, 0.0, 0.0};  // not unit norm
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = axis_projector();
    p.pcs.pop_back();
    CHECK_THROWS_AS(p.validate(), ConfigError);

    auto c = axis_classifier(0);
    c.target_class = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = axis_classifier(0);
    c.classes = {"only"};
    c.protos = {{1.0, 0.0, 0.0}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("principal component of a two-point stack is their difference direction") {
    const std::vector<std::vector<double>> stack{{1.0, 2.0, 3.0}, {3.0, 2.0, 1.0}};
    const auto pc = attr::principal_component(stack);
    // Centered points are +-(1,0,-1)/|..|; sign rule keeps the largest entry positive.
    const double r = 1.0 / std::sqrt(2.0);
    CHECK(pc[0] == doctest::Approx(r).epsilon(1e-9));
    CHECK(pc[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(pc[2] == doctest::Approx(-r).epsilon(1e-9));
}

TEST_CASE("principal component maximizes the scatter Rayleigh quotient") {
    std::mt19937_64 rng(17);
    auto u = [&rng] { return std::ldexp(static_cast<double>(rng() >> 11), -53) * 2.0 - 1.0; };
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t d = 3 + rng() % 3, n = 4 + rng() % 5;
        std::vector<std::vector<double>> stack(n, std::vector<double>(d));
        for (auto& e : stack)
            for (double& x : e) x = u();

        const auto pc = attr::principal_component(stack);
        double nrm = 0.0;
        for (double x : pc) nrm += x * x;
        CHECK(std::sqrt(nrm) == doctest::Approx(1.0).epsilon(1e-9));

        // Rebuild the centered scatter matrix independently.
        std::vector<double> mean(d, 0.0);
        for (const auto& e : stack)
            for (std::size_t k = 0; k < d; ++k) mean[k] += e[k] / static_cast<double>(n);
        std::vector<double> c(d * d, 0.0);
        for (const auto& e : stack)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    c[i * d + j] += (e[i] - mean[i]) * (e[j] - mean[j]);

        // Eigenvector residual: C v = lambda v with lambda the quotient.
        const double lambda = rayleigh(c, pc);
        for (std::size_t i = 0; i < d; ++i) {
            double cv = 0.0;
            for (std::size_t j = 0; j < d; ++j) cv += c[i * d + j] * pc[j];
            CHECK(cv == doctest::Approx(lambda * pc[i]).epsilon(1e-7).scale(1.0));
        }
        // No random direction beats it.
        for (int probe = 0; probe < 50; ++probe) {
            std::vector<double> v(d);
            double vn = 0.0;
            for (double& x : v) {
                x = u();
                vn += x * x;
            }
            vn = std::sqrt(vn);
            for (double& x : v) x /= vn;
            CHECK(rayleigh(c, v) <= lambda + 1e-7);
        }
    }
}

TEST_CASE("principal component degenerate inputs") {
    CHECK_THROWS_AS(attr::principal_component({{1.0, 2.0}}), DegenerateSeedSetError);
    CHECK_THROWS_AS(attr::principal_component({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}}),
                    DegenerateSeedSetError);
    CHECK_THROWS_AS(attr::principal_component({{1.0, 2.0}, {1.0, 2.0, 3.0}}), ConfigError);
}

TEST_CASE("group posterior from clamped cosines") {
    const auto p = axis_projector();

    const auto on_axis = attr::q_a_token(p, std::vector<double>{2.0, 0.0, 0.0});
    CHECK(on_axis.probs[0] == doctest::Approx(1.0));
    CHECK(on_axis.probs[1] == doctest::Approx(0.0));
    CHECK_FALSE(on_axis.prior_fallback);

    const auto diagonal = attr::q_a_token(p, std::vector<double>{1.0, 1.0, 0.0});
    CHECK(diagonal.probs[0] == doctest::Approx(0.5));
    CHECK(diagonal.probs[1] == doctest::Approx(0.5));

    // Negative cosines clamp to zero; all-clamped falls back to the prior.
    const auto opposite = attr::q_a_token(p, std::vector<double>{-1.0, -1.0, 0.0});
    CHECK(opposite.prior_fallback);
    CHECK(opposite.probs[0] == doctest::Approx(0.5));

    const auto zero = attr::q_a_token(p, std::vector<double>{0.0, 0.0, 0.0});
    CHECK(zero.prior_fallback);

    attr::GroupProjector skew = p;
    skew.prior = {0.25, 0.75};
    const auto fb = attr::q_a_token(skew, std::vector<double>{0.0, 0.0, 1.0});
    CHECK(fb.prior_fallback);
    CHECK(fb.probs[0] == doctest::Approx(0.25));
    CHECK(fb.probs[1] == doctest::Approx(0.75));
}

TEST_CASE("prefix posterior uses the mean embedding") {
    const auto p = axis_projector();
    const auto m = axis_model();
    // Tokens 0 and 1: mean embedding is the diagonal -> equal posterior.
    const auto q = attr::q_a_prefix(p, m, std::vector<int>{0, 1});
    CHECK(q.probs[0] == doctest::Approx(0.5));
    CHECK(q.probs[1] == doctest::Approx(0.5));
    CHECK_THROWS_AS(attr::q_a_prefix(p, m, std::vector<int>{}), ConfigError);

    const auto me = attr::mean_embedding(m, std::vector<int>{0, 1});
    CHECK(me[0] == doctest::Approx(0.5));
    CHECK(me[1] == doctest::Approx(0.5));
    CHECK(me[2] == doctest::Approx(0.0));
    const auto empty = attr::mean_embedding(m, std::vector<int>{});
    CHECK(empty == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("KL divergence basics") {
    const std::vector<double> p{1.0, 0.0}, q{0.5, 0.5};
    CHECK(attr::kl_divergence(p, q) == doctest::Approx(std::log(2.0)));
    CHECK(attr::kl_divergence(q, q) == doctest::Approx(0.0));
    // Asymmetry: KL(q || p) hits the clamp on the zero cell.
    CHECK(attr::kl_divergence(q, p) > attr::kl_divergence(p, q));
    // 0 log 0 contributes nothing.
    CHECK(attr::kl_divergence(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 1.0}) ==
          doctest::Approx(0.0));
}

TEST_CASE("group loss integrand worked values") {
    const auto proj = axis_projector();
    const auto m = axis_model();
    const auto phi = attr::loss_a_phi(proj, m, std::vector<int>{});

    // Fully group-aligned candidate with empty prefix: the prefix term vanishes
    // and the identification term is 0.5 * ln 2.
    CHECK(phi[0] == doctest::Approx(0.5 * std::log(2.0)));
    CHECK(phi[1] == doctest::Approx(0.5 * std::log(2.0)));
    // Off-direction candidate: posterior equals the prior everywhere -> 0.
    CHECK(phi[2] == doctest::Approx(0.0));
    // Diagonal candidate: posterior (.5,.5) equals the prior -> 0 as well.
    CHECK(phi[3] == doctest::Approx(0.0));
}

TEST_CASE("property loss integrand worked values") {
    const auto m = axis_model();
    const auto cls = axis_classifier(1);
    const auto phi = attr::loss_g_phi(cls, m, std::vector<int>{});

    // Candidate on the target prototype: -log 1 = 0.
    CHECK(phi[1] == doctest::Approx(0.0));
    // Candidate fully on the other prototype: clamped at 1e-12.
    CHECK(phi[0] == doctest::Approx(-std::log(1e-12)));
    // Diagonal candidate: q(target) = 0.5.
    CHECK(phi[3] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("expected losses are the integrand dot the distribution") {
    const auto proj = axis_projector();
    const auto cls = axis_classifier(0);
    const auto m = axis_model();
    const std::vector<int> prefix{2};
    const seqcore::NextTokenDistribution dist{{0.1, 0.2, 0.3, 0.4}};

    const auto phi_a = attr::loss_a_phi(proj, m, prefix);
    const auto phi_g = attr::loss_g_phi(cls, m, prefix);
    double ea = 0.0, eg = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        ea += dist.probs[i] * phi_a[i];
        eg += dist.probs[i] * phi_g[i];
    }
    CHECK(attr::loss_a(proj, dist, m, prefix) == doctest::Approx(ea).epsilon(1e-12));
    CHECK(attr::loss_g(cls, dist, m, prefix) == doctest::Approx(eg).epsilon(1e-12));
}

TEST_CASE("decay weight worked example") {
    // History [1, 2], gamma = 1/2: (1 * 1/4 + 2 * 1/2) / (1/4 + 1/2) = 5/3.
    const std::vector<double> hist{1.0, 2.0};
    CHECK(attr::decay_weight(hist, 0.5) == doctest::Approx(5.0 / 3.0).epsilon(1e-12));

    // Single element: the weighted mean is that element.
    CHECK(attr::decay_weight(std::vector<double>{3.25}, 0.5) == doctest::Approx(3.25));

    // Flat history is invariant to gamma.
    const std::vector<double> flat{2.0, 2.0, 2.0};
    CHECK(attr::decay_weight(flat, 0.9) == doctest::Approx(2.0));

    // gamma -> recency: small gamma tracks the most recent loss.
    CHECK(attr::decay_weight(hist, 0.01) == doctest::Approx(2.0).epsilon(0.02));
}
