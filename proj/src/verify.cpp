#include "lidao/verify.hpp"

#include <cmath>
#include <limits>
#include <random>

#include <json.hpp>

#include "lidao/attr.hpp"
#include "lidao/controller.hpp"
#include "lidao/seqcore.hpp"
#include "lidao/toylm.hpp"

namespace lidao::verify {

namespace {

// Tolerances for every check, pinned here.
constexpr double kChainRuleTol = 1e-9;
constexpr double kInterleavedTol = 1e-10;
constexpr double kSlackTol = 1e-10;
constexpr double kRouteTol = 1e-9;
constexpr double kGradRelTol = 1e-5;
constexpr double kGradStep = 1e-5;
constexpr double kAdamTol = 1e-6;
constexpr double kMixtureTol = 1e-12;
constexpr double kDecayTol = 1e-12;

double u01(std::mt19937_64& rng) {
    return std::ldexp(static_cast<double>(rng() >> 11), -53);
}

// Cells bounded away from zero so no clamp floor is ever active.
std::vector<double> random_cells(std::mt19937_64& rng, std::size_t n) {
    std::vector<double> cells(n);
    double total = 0.0;
    for (double& c : cells) {
        c = 0.05 + u01(rng);
        total += c;
    }
    for (double& c : cells) c /= total;
    return cells;
}

infoth::Joint random_joint(std::mt19937_64& rng, const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return infoth::Joint::from_flat(dims, random_cells(rng, n));
}

std::size_t random_dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

template <typename Fn>
CheckResult run_check(const std::string& name, std::size_t instances, double tolerance, Fn&& fn) {
    CheckResult result;
    result.check_name = name;
    result.instances = instances;
    try {
        result.max_residual = fn();
        result.pass = result.max_residual <= tolerance;
    } catch (const std::exception&) {
        result.max_residual = std::numeric_limits<double>::infinity();
        result.pass = false;
    }
    return result;
}

// ---- information-theory sweeps ----------------------------------------------

CheckResult check_chain_rule(const VerifyOptions& opts) {
    const LemmaResidualFn fn = opts.chain_rule_fn
                                   ? opts.chain_rule_fn
                                   : [](const infoth::Joint& j, std::size_t g, std::size_t a,
                                        std::span<const std::size_t> x, std::size_t t) {
                                         return infoth::lemma_residual(j, g, a, x, t);
                                     };
    return run_check("mi_chain_rule_identity", static_cast<std::size_t>(opts.chain_rule_joints),
                     kChainRuleTol, [&] {
                         std::mt19937_64 rng(opts.seed * 6364136223846793005ULL + 1);
                         double worst = 0.0;
                         for (int i = 0; i < opts.chain_rule_joints; ++i) {
                             const std::size_t T = random_dim(rng, 1, 4);
                             std::vector<std::size_t> dims{random_dim(rng, 2, 3),
                                                           random_dim(rng, 2, 3)};
                             std::vector<std::size_t> x_axes;
                             for (std::size_t t = 0; t < T; ++t) {
                                 dims.push_back(random_dim(rng, 2, 3));
                                 x_axes.push_back(2 + t);
                             }
                             const infoth::Joint joint = random_joint(rng, dims);
                             for (std::size_t t = 1; t <= T; ++t)
                                 worst = std::max(worst, fn(joint, 0, 1, x_axes, t));
                         }
                         return worst;
                     });
}

CheckResult check_interleaved(const VerifyOptions& opts) {
    return run_check("interleaved_independence",
                     static_cast<std::size_t>(opts.interleaved_instances), kInterleavedTol, [&] {
                         double worst = 0.0;
                         for (int i = 0; i < opts.interleaved_instances; ++i) {
                             infoth::InterleavedSpec spec;
                             spec.T = 4;
                             spec.V = 2;
                             spec.seed = opts.seed * 1000003ULL + static_cast<std::uint64_t>(i);
                             const infoth::Joint joint = infoth::build_interleaved_joint(spec);
                             std::vector<std::size_t> x_axes;
                             for (int t = 0; t < spec.T; ++t)
                                 x_axes.push_back(2 + static_cast<std::size_t>(t));
                             const infoth::TheoremCheckResult res =
                                 infoth::theorem_check(joint, 0, 1, x_axes);
                             worst = std::max(worst, res.max_step_min);
                             worst = std::max(worst, res.mi_ga);
                         }
                         return worst;
                     });
}

// Random short processes with a prompt variable and random labelers; the
// pushforward joint over (property, joint-label, generation-label) must obey
// the coarsening bound.
CheckResult check_coarsening(const VerifyOptions& opts) {
    return run_check("label_coarsening_bound", static_cast<std::size_t>(opts.coarsening_joints),
                     kSlackTol, [&] {
                         std::mt19937_64 rng(opts.seed * 2862933555777941757ULL + 3);
                         double worst = 0.0;
                         for (int i = 0; i < opts.coarsening_joints; ++i) {
                             const std::size_t V = random_dim(rng, 2, 3);
                             const std::size_t T = random_dim(rng, 2, 3);
                             const std::size_t C = random_dim(rng, 2, 3);
                             const std::size_t g_dim = random_dim(rng, 2, 3);
                             const std::size_t a_dim = random_dim(rng, 2, 3);

                             // One conditional table per position, shared
                             // across prompts; sequences have length exactly T.
                             std::size_t n_seqs = 1;
                             for (std::size_t t = 0; t < T; ++t) n_seqs *= V;
                             const std::vector<double> prompt_prob = random_cells(rng, C);

                             // Random sequence distribution per prompt value.
                             std::vector<std::vector<double>> seq_prob(C);
                             for (std::size_t c = 0; c < C; ++c)
                                 seq_prob[c] = random_cells(rng, n_seqs);

                             // Random labelers: g(x), a_gen(x), a_joint(c, x).
                             std::vector<std::size_t> g_of(n_seqs), ag_of(n_seqs);
                             for (std::size_t s = 0; s < n_seqs; ++s) {
                                 g_of[s] = rng() % g_dim;
                                 ag_of[s] = rng() % a_dim;
                             }
                             std::vector<double> flat(g_dim * a_dim * a_dim, 0.0);
                             for (std::size_t c = 0; c < C; ++c) {
                                 for (std::size_t s = 0; s < n_seqs; ++s) {
                                     const std::size_t aj = rng() % a_dim;
                                     flat[(g_of[s] * a_dim + aj) * a_dim + ag_of[s]] +=
                                         prompt_prob[c] * seq_prob[c][s];
                                 }
                             }
                             const infoth::Joint labels =
                                 infoth::Joint::from_flat({g_dim, a_dim, a_dim}, flat);
                             const infoth::PropositionCheckResult res =
                                 infoth::proposition_check(labels);
                             worst = std::max(worst, -res.slack);
                         }
                         return std::max(worst, 0.0);
                     });
}

CheckResult check_vi_triangle(const VerifyOptions& opts) {
    return run_check("vi_triangle_inequality", static_cast<std::size_t>(opts.vi_triples),
                     kSlackTol, [&] {
                         std::mt19937_64 rng(opts.seed * 3202034522624059733ULL + 5);
                         double worst = 0.0;
                         for (int i = 0; i < opts.vi_triples; ++i) {
                             const infoth::Joint joint = random_joint(
                                 rng, {random_dim(rng, 2, 3), random_dim(rng, 2, 3),
                                       random_dim(rng, 2, 3)});
                             const std::size_t x[] = {0}, y[] = {1}, z[] = {2};
                             const double xz = infoth::vi_distance(joint, x, z);
                             const double xy = infoth::vi_distance(joint, x, y);
                             const double yz = infoth::vi_distance(joint, y, z);
                             worst = std::max(worst, xz - xy - yz);
                         }
                         return std::max(worst, 0.0);
                     });
}

CheckResult check_mi_routes(const VerifyOptions& opts) {
    return run_check("mi_entropy_route_agreement", 50, kRouteTol, [&] {
        std::mt19937_64 rng(opts.seed * 7046029254386353087ULL + 7);
        double worst = 0.0;
        for (int i = 0; i < 50; ++i) {
            const infoth::Joint joint =
                random_joint(rng, {random_dim(rng, 2, 3), random_dim(rng, 2, 3),
                                   random_dim(rng, 2, 3)});
            const std::size_t x[] = {0}, y[] = {1}, z[] = {2};
            worst = std::max(worst, std::abs(infoth::mutual_info(joint, x, y) -
                                             infoth::mutual_info_entropy_route(joint, x, y)));
            worst = std::max(worst,
                             std::abs(infoth::cond_mutual_info(joint, x, y, z) -
                                      infoth::cond_mutual_info_entropy_route(joint, x, y, z)));
        }
        return worst;
    });
}

// ---- gradient fidelity ------------------------------------------------------

toylm::ToyLM random_model(std::mt19937_64& rng) {
    toylm::ToyLM m;
    m.vocab_size = static_cast<int>(random_dim(rng, 4, 8));
    m.d = static_cast<int>(random_dim(rng, 3, 5));
    m.h = static_cast<int>(random_dim(rng, 3, 5));
    m.context_window = static_cast<int>(random_dim(rng, 1, 4));
    auto fill = [&rng](std::vector<double>& v, std::size_t n, double scale) {
        v.resize(n);
        for (double& x : v) x = (2.0 * u01(rng) - 1.0) * scale;
    };
    fill(m.embed, static_cast<std::size_t>(m.vocab_size) * m.d, 1.0);
    fill(m.w1, static_cast<std::size_t>(m.h) * m.d, 1.0);
    fill(m.b1, static_cast<std::size_t>(m.h), 0.5);
    fill(m.w2, static_cast<std::size_t>(m.vocab_size) * m.h, 1.0);
    fill(m.b2, static_cast<std::size_t>(m.vocab_size), 0.5);
    m.validate();
    return m;
}

std::vector<double> random_unit(std::mt19937_64& rng, int d) {
    std::vector<double> v(d);
    double norm = 0.0;
    while (norm == 0.0) {
        for (double& x : v) x = 2.0 * u01(rng) - 1.0;
        norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
    }
    for (double& x : v) x /= norm;
    return v;
}

double loss_at(const toylm::ToyLM& model, const toylm::TunableDelta& delta,
               std::span<const int> context, const toylm::DistributionLoss& loss) {
    return loss.value(toylm::forward(model, delta, context).dist);
}

double gradient_residual(const toylm::ToyLM& model, std::span<const int> context,
                         const toylm::DistributionLoss& loss) {
    const toylm::TunableDelta analytic =
        toylm::grad_tunable(model, toylm::TunableDelta::zeros(model), context, loss);

    double max_diff = 0.0, max_scale = 0.0;
    toylm::TunableDelta delta = toylm::TunableDelta::zeros(model);
    auto probe = [&](std::vector<double>& slot, const std::vector<double>& ana) {
        for (std::size_t i = 0; i < slot.size(); ++i) {
            slot[i] = kGradStep;
            const double up = loss_at(model, delta, context, loss);
            slot[i] = -kGradStep;
            const double down = loss_at(model, delta, context, loss);
            slot[i] = 0.0;
            const double numeric = (up - down) / (2.0 * kGradStep);
            max_diff = std::max(max_diff, std::abs(ana[i] - numeric));
            max_scale = std::max({max_scale, std::abs(numeric), std::abs(ana[i])});
        }
    };
    probe(delta.db1, analytic.db1);
    probe(delta.db2, analytic.db2);
    // Relative error is undefined when the whole gradient is ~0 (e.g., a
    // constant integrand); floor the scale well above central-difference
    // roundoff (absolute noise ~1e-9) so such instances compare absolutely.
    return max_diff / std::max(max_scale, 1e-3);
}

CheckResult check_gradients(const VerifyOptions& opts) {
    return run_check("gradient_finite_difference", static_cast<std::size_t>(opts.gradient_triples),
                     kGradRelTol, [&] {
                         std::mt19937_64 rng(opts.seed * 5871781006564002453ULL + 11);
                         double worst = 0.0;
                         for (int i = 0; i < opts.gradient_triples; ++i) {
                             const toylm::ToyLM model = random_model(rng);
                             std::vector<int> context(random_dim(rng, 1, 4));
                             for (int& t : context)
                                 t = static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                          model.vocab_size));
                             std::vector<int> gen_prefix(random_dim(rng, 1, 3) - 1);
                             for (int& t : gen_prefix)
                                 t = static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                          model.vocab_size));

                             attr::GroupProjector projector;
                             projector.groups = {"ga", "gb"};
                             projector.pcs = {random_unit(rng, model.d),
                                              random_unit(rng, model.d)};
                             const double pa = 0.2 + 0.6 * u01(rng);
                             projector.prior = {pa, 1.0 - pa};
                             projector.validate();

                             attr::AttributeClassifier classifier;
                             classifier.classes = {"ca", "cb"};
                             classifier.protos = {random_unit(rng, model.d),
                                                  random_unit(rng, model.d)};
                             classifier.target_class = static_cast<int>(rng() % 2);
                             classifier.validate();

                             const toylm::LinearDistributionLoss loss_g(
                                 attr::loss_g_phi(classifier, model, gen_prefix));
                             const toylm::LinearDistributionLoss loss_a(
                                 attr::loss_a_phi(projector, model, gen_prefix));
                             const toylm::ProductDistributionLoss loss_prod(loss_g.phi,
                                                                            loss_a.phi);

                             worst = std::max(worst, gradient_residual(model, context, loss_g));
                             worst = std::max(worst, gradient_residual(model, context, loss_a));
                             worst = std::max(worst,
                                              gradient_residual(model, context, loss_prod));
                         }
                         return worst;
                     });
}

// ---- controller closed forms ------------------------------------------------

CheckResult check_adam(const VerifyOptions& opts) {
    return run_check("adam_step_magnitude", 100, kAdamTol, [&] {
        std::mt19937_64 rng(opts.seed * 4292484099903637661ULL + 13);
        const double lr = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        double worst = 0.0;
        for (int i = 0; i < 100; ++i) {
            std::vector<double> grad(8);
            for (double& g : grad) {
                g = (1.0 + 9.0 * u01(rng));  // |g| in [1, 10] >> eps
                if (u01(rng) < 0.5) g = -g;
            }
            const std::vector<double> delta =
                controller::adam_single_step(grad, lr, beta1, beta2, eps);
            for (std::size_t k = 0; k < grad.size(); ++k) {
                worst = std::max(worst, std::abs(std::abs(delta[k]) - lr));
                if (delta[k] * grad[k] > 0.0) worst = std::max(worst, 1.0);  // must descend
            }
        }
        return worst;
    });
}

CheckResult check_mixture(const VerifyOptions& opts) {
    return run_check("geometric_mixture_forms", 3 + 20, kMixtureTol, [&] {
        double worst = 0.0;

        seqcore::NextTokenDistribution tuned{{0.8, 0.2}};
        seqcore::NextTokenDistribution base{{0.5, 0.5}};
        const seqcore::NextTokenDistribution mid =
            controller::mix_distributions(tuned, base, 0.5);
        worst = std::max(worst, std::abs(mid.probs[0] - 2.0 / 3.0));
        worst = std::max(worst, std::abs(mid.probs[1] - 1.0 / 3.0));

        std::mt19937_64 rng(opts.seed * 6874767393619811939ULL + 17);
        for (int i = 0; i < 20; ++i) {
            const std::size_t n = random_dim(rng, 2, 6);
            seqcore::NextTokenDistribution p{random_cells(rng, n)};
            seqcore::NextTokenDistribution q{random_cells(rng, n)};
            const auto at_one = controller::mix_distributions(p, q, 1.0);
            const auto at_zero = controller::mix_distributions(p, q, 0.0);
            for (std::size_t k = 0; k < n; ++k) {
                // endpoints must be exact, not merely close
                if (at_one.probs[k] != p.probs[k]) worst = std::max(worst, 1.0);
                if (at_zero.probs[k] != q.probs[k]) worst = std::max(worst, 1.0);
            }
        }
        return worst;
    });
}

CheckResult check_decay(const VerifyOptions&) {
    return run_check("decay_weight_example", 1, kDecayTol, [&] {
        const double history[] = {1.0, 2.0};
        return std::abs(attr::decay_weight(history, 0.5) - 5.0 / 3.0);
    });
}

CheckResult check_sampling_identity(const VerifyOptions& opts) {
    return run_check("sampling_identity_passthrough", 20, 0.0, [&] {
        std::mt19937_64 rng(opts.seed * 9223372036854775783ULL + 19);
        seqcore::SamplingConfig cfg;
        cfg.coverage = 1.0;
        cfg.temperature = 1.0;
        cfg.repetition_penalty = 1.0;
        double worst = 0.0;
        for (int i = 0; i < 20; ++i) {
            const std::size_t n = random_dim(rng, 2, 8);
            seqcore::NextTokenDistribution p{random_cells(rng, n)};
            const std::vector<int> history{0, static_cast<int>(n) - 1};
            const auto out = seqcore::pipeline_distribution(p, history, cfg);
            for (std::size_t k = 0; k < n; ++k) {
                if (out.probs[k] != p.probs[k]) worst = std::max(worst, 1.0);
            }
        }
        return worst;
    });
}

} // namespace

// ---- entry point ------------------------------------------------------------

bool VerificationReport::all_pass() const {
    for (const auto& c : checks) {
        if (!c.pass) return false;
    }
    return !checks.empty();
}

std::string VerificationReport::to_json_string() const {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
        nlohmann::ordered_json row;
        row["check_name"] = c.check_name;
        row["instances"] = c.instances;
        row["max_residual"] = c.max_residual;
        row["pass"] = c.pass;
        doc.push_back(std::move(row));
    }
    return doc.dump(2) + "\n";
}

VerificationReport run_verification(const VerifyOptions& opts) {
    VerificationReport report;
    report.checks.push_back(check_chain_rule(opts));
    report.checks.push_back(check_interleaved(opts));
    report.checks.push_back(check_coarsening(opts));
    report.checks.push_back(check_vi_triangle(opts));
    report.checks.push_back(check_mi_routes(opts));
    report.checks.push_back(check_gradients(opts));
    report.checks.push_back(check_adam(opts));
    report.checks.push_back(check_mixture(opts));
    report.checks.push_back(check_decay(opts));
    report.checks.push_back(check_sampling_identity(opts));
    return report;
}

} // namespace lidao::verify
