#include "lidao/controller.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

namespace lidao::controller {

// ---- configuration ----------------------------------------------------------

namespace {

const std::map<std::string, Method>& method_table() {
    static const std::map<std::string, Method> table = {
        {"none", Method::none},           {"g_only", Method::g_only},
        {"a_only", Method::a_only},       {"uddia_sum", Method::uddia_sum},
        {"lidao_min", Method::lidao_min}, {"lidao_prod", Method::lidao_prod},
        {"elidao_min", Method::elidao_min}, {"elidao_prod", Method::elidao_prod},
    };
    return table;
}

} // namespace

Method method_from_string(const std::string& name) {
    auto it = method_table().find(name);
    if (it == method_table().end()) throw ConfigError("unknown method: " + name);
    return it->second;
}

std::string method_to_string(Method method) {
    for (const auto& [name, m] : method_table())
        if (m == method) return name;
    throw ConfigError("unmapped method enum value");
}

bool is_elidao(Method method) {
    return method == Method::elidao_min || method == Method::elidao_prod;
}

void InterventionConfig::validate() const {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0,1]");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must lie in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

std::string chosen_to_string(Chosen chosen) {
    switch (chosen) {
        case Chosen::none: return "none";
        case Chosen::g_option: return "g";
        case Chosen::a_option: return "a";
        case Chosen::both: return "both";
        case Chosen::product: return "product";
    }
    throw ConfigError("unmapped chosen enum value");
}

// ---- GenerationRecord -------------------------------------------------------

seqcore::TokenSequence GenerationRecord::full_sequence() const {
    seqcore::TokenSequence seq = prompt;
    for (std::size_t i = 0; i < output.size(); ++i) seq.push_back(output.ids[i], output.origins[i]);
    return seq;
}

// ---- primitive steps --------------------------------------------------------

std::pair<double, Chosen> step_loss(Method method, double lg, double la, double wg, double wa) {
    if (!std::isfinite(lg) || !std::isfinite(la))
        throw NumericFailureError("step_loss on non-finite losses");
    switch (method) {
        case Method::none:
            return {0.0, Chosen::none};
        case Method::g_only:
            return {lg, Chosen::g_option};
        case Method::a_only:
            return {la, Chosen::a_option};
        case Method::uddia_sum:
            return {lg + la, Chosen::both};
        case Method::lidao_min:
        case Method::elidao_min: {
            if (!(wg > 0.0 && wa > 0.0))
                throw NumericFailureError("min-based step requires positive rescale weights");
            const double rg = lg / wg, ra = la / wa;
            if (rg <= ra) return {rg, Chosen::g_option};  // ties go to the g option
            return {ra, Chosen::a_option};
        }
        case Method::lidao_prod:
        case Method::elidao_prod:
            return {lg * la, Chosen::product};
    }
    throw ConfigError("unmapped method enum value");
}

std::vector<double> adam_single_step(std::span<const double> grad, double lr, double beta1,
                                     double beta2, double eps) {
    (void)beta1;  // bias correction cancels beta1 exactly on the first step
    std::vector<double> delta(grad.size(), 0.0);
    const double eps_eff = eps * std::sqrt(1.0 - beta2);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) throw NumericFailureError("non-finite gradient in adam step");
        delta[i] = -lr * grad[i] / (std::abs(grad[i]) + eps_eff);
    }
    return delta;
}

seqcore::NextTokenDistribution mix_distributions(const seqcore::NextTokenDistribution& tuned,
                                                 const seqcore::NextTokenDistribution& base,
                                                 double tau) {
    if (tuned.probs.size() != base.probs.size())
        throw ConfigError("mix_distributions size mismatch");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0,1]");
    if (tau == 0.0) return base;
    if (tau == 1.0) return tuned;
    seqcore::NextTokenDistribution out;
    out.probs.resize(base.probs.size(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < base.probs.size(); ++i) {
        const double m = (tuned.probs[i] > 0.0 && base.probs[i] > 0.0)
                             ? std::pow(tuned.probs[i], tau) * std::pow(base.probs[i], 1.0 - tau)
                             : 0.0;
        out.probs[i] = m;
        sum += m;
    }
    if (!(sum > 0.0)) throw DegenerateDistributionError("geometric mixture has zero mass");
    for (double& p : out.probs) p /= sum;
    return out;
}

seqcore::NextTokenDistribution elidao_override(const seqcore::NextTokenDistribution& mix,
                                               const seqcore::NextTokenDistribution& ref,
                                               std::span<const int> seed_union) {
    seqcore::NextTokenDistribution out = mix;
    for (int tok : seed_union) {
        if (tok < 0 || tok >= static_cast<int>(out.probs.size()))
            throw ConfigError("seed token out of range in override");
        out.probs[tok] = ref.probs[tok];
    }
    double sum = 0.0;
    for (double p : out.probs) sum += p;
    if (!(sum > 0.0)) throw DegenerateDistributionError("seed-word override left zero mass");
    for (double& p : out.probs) p /= sum;
    return out;
}

seqcore::NextTokenDistribution reference_distribution(const toylm::ToyLM& model,
                                                      std::span<const int> context,
                                                      std::span<const int> group_seed_tokens,
                                                      double boost) {
    const toylm::TunableDelta zero = toylm::TunableDelta::zeros(model);
    toylm::ForwardResult fr = toylm::forward(model, zero, context);
    if (group_seed_tokens.empty() || boost == 0.0) return fr.dist;
    for (int tok : group_seed_tokens) {
        if (tok < 0 || tok >= model.vocab_size)
            throw ConfigError("seed token out of range in reference distribution");
        fr.logits[tok] += boost;
    }
    return seqcore::softmax(fr.logits);
}

// ---- per-step pipeline ------------------------------------------------------

StepOutcome intervention_step(const toylm::ToyLM& model, const AttrBundle& bundle,
                              const InterventionConfig& icfg, const seqcore::SamplingConfig& scfg,
                              const seqcore::TokenSequence& seq, std::span<const double> lg_hist,
                              std::span<const double> la_hist) {
    const toylm::TunableDelta zero = toylm::TunableDelta::zeros(model);
    const toylm::ForwardResult base = toylm::forward(model, zero, seq.ids);

    const std::vector<int> gen_prefix = seq.generated_ids();
    const std::vector<double> phi_g = attr::loss_g_phi(bundle.classifier, model, gen_prefix);
    const std::vector<double> phi_a = attr::loss_a_phi(bundle.projector, model, gen_prefix);

    double lg = 0.0, la = 0.0;
    for (int i = 0; i < model.vocab_size; ++i) {
        lg += base.dist.probs[i] * phi_g[i];
        la += base.dist.probs[i] * phi_a[i];
    }
    const double wg = lg_hist.empty() ? 1.0 : attr::decay_weight(lg_hist, icfg.gamma);
    const double wa = la_hist.empty() ? 1.0 : attr::decay_weight(la_hist, icfg.gamma);
    const auto [_, chosen] = step_loss(icfg.method, lg, la, wg, wa);

    StepOutcome out;
    out.record = {lg, la, wg, wa, chosen};

    seqcore::NextTokenDistribution mixed;
    if (icfg.method == Method::none) {
        mixed = base.dist;
    } else {
        // Objective gradient in distribution space for the chosen schedule.
        std::unique_ptr<toylm::DistributionLoss> loss;
        switch (chosen) {
            case Chosen::g_option: {
                std::vector<double> phi = phi_g;
                const double scale = (icfg.method == Method::lidao_min ||
                                      icfg.method == Method::elidao_min)
                                         ? 1.0 / wg
                                         : 1.0;
                for (double& v : phi) v *= scale;
                loss = std::make_unique<toylm::LinearDistributionLoss>(std::move(phi));
                break;
            }
            case Chosen::a_option: {
                std::vector<double> phi = phi_a;
                const double scale = (icfg.method == Method::lidao_min ||
                                      icfg.method == Method::elidao_min)
                                         ? 1.0 / wa
                                         : 1.0;
                for (double& v : phi) v *= scale;
                loss = std::make_unique<toylm::LinearDistributionLoss>(std::move(phi));
                break;
            }
            case Chosen::both: {
                std::vector<double> phi(phi_g.size(), 0.0);
                for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = phi_g[i] + phi_a[i];
                loss = std::make_unique<toylm::LinearDistributionLoss>(std::move(phi));
                break;
            }
            case Chosen::product:
                loss = std::make_unique<toylm::ProductDistributionLoss>(phi_g, phi_a);
                break;
            case Chosen::none:
                break;
        }

        toylm::TunableDelta tuned_delta = zero;
        if (loss) {
            const toylm::TunableDelta grad = toylm::grad_tunable(model, zero, seq.ids, *loss);
            tuned_delta.db1 =
                adam_single_step(grad.db1, icfg.lr, icfg.adam_beta1, icfg.adam_beta2, icfg.adam_eps);
            tuned_delta.db2 =
                adam_single_step(grad.db2, icfg.lr, icfg.adam_beta1, icfg.adam_beta2, icfg.adam_eps);
        }
        const toylm::ForwardResult tuned = toylm::forward(model, tuned_delta, seq.ids);
        mixed = mix_distributions(tuned.dist, base.dist, icfg.tau);
    }

    if (is_elidao(icfg.method)) {
        const seqcore::NextTokenDistribution ref = reference_distribution(
            model, seq.ids, bundle.prompt_group_seeds, icfg.elidao_boost);
        mixed = elidao_override(mixed, ref, bundle.seed_union);
    }

    out.final_dist = seqcore::pipeline_distribution(mixed, seq.ids, scfg);
    return out;
}

// ---- generation -------------------------------------------------------------

GenerationRecord generate(const toylm::ToyLM& model, const AttrBundle& bundle,
                          const InterventionConfig& icfg, const seqcore::SamplingConfig& scfg,
                          std::span<const int> prompt_tokens, int eos_id, std::mt19937_64& rng) {
    icfg.validate();
    scfg.validate();
    if (prompt_tokens.empty())
        throw ConfigError("generate requires a nonempty starting context (at least BOS)");

    GenerationRecord rec;
    seqcore::TokenSequence seq;
    for (int tok : prompt_tokens) seq.push_back(tok, seqcore::TokenOrigin::prompt);
    rec.prompt = seq;

    std::vector<double> lg_hist, la_hist;
    rec.terminated_by = TerminatedBy::max_len;
    for (int t = 0; t < icfg.max_len; ++t) {
        StepOutcome step;
        try {
            step = intervention_step(model, bundle, icfg, scfg, seq, lg_hist, la_hist);
        } catch (const LabError& e) {
            throw NumericFailureError("step " + std::to_string(t + 1) + ": " + e.what());
        }
        const int tok = seqcore::sample_token(step.final_dist, rng);
        seq.push_back(tok, seqcore::TokenOrigin::generated);
        rec.output.push_back(tok, seqcore::TokenOrigin::generated);
        rec.trace.steps.push_back(step.record);
        lg_hist.push_back(step.record.lg);
        la_hist.push_back(step.record.la);
        if (tok == eos_id) {
            rec.terminated_by = TerminatedBy::eos;
            break;
        }
    }
    return rec;
}

infoth::SequenceEnsemble enumerate_generation(const toylm::ToyLM& model, const AttrBundle& bundle,
                                              const InterventionConfig& icfg,
                                              const seqcore::SamplingConfig& scfg,
                                              std::span<const int> prompt_tokens, int eos_id,
                                              double prune) {
    icfg.validate();
    scfg.validate();
    if (prompt_tokens.empty())
        throw ConfigError("enumerate_generation requires a nonempty starting context");
    infoth::check_enumeration_budget(model.vocab_size, icfg.max_len);

    infoth::SequenceEnsemble out;
    seqcore::TokenSequence seq;
    for (int tok : prompt_tokens) seq.push_back(tok, seqcore::TokenOrigin::prompt);
    std::vector<double> lg_hist, la_hist;
    std::vector<int> generated;

    // Depth-first walk over the intervened process; losses recorded along the
    // path feed the rescale weights exactly as they would during sampling.
    auto rec = [&](auto&& self, double path_prob) -> void {
        if (static_cast<int>(generated.size()) == icfg.max_len) {
            out.outcomes.push_back(generated);
            out.probs.push_back(path_prob);
            return;
        }
        const StepOutcome step = intervention_step(model, bundle, icfg, scfg, seq, lg_hist, la_hist);
        for (int tok = 0; tok < model.vocab_size; ++tok) {
            const double q = path_prob * step.final_dist.probs[tok];
            if (q < prune) continue;
            generated.push_back(tok);
            seq.push_back(tok, seqcore::TokenOrigin::generated);
            lg_hist.push_back(step.record.lg);
            la_hist.push_back(step.record.la);
            if (tok == eos_id) {
                out.outcomes.push_back(generated);
                out.probs.push_back(q);
            } else {
                self(self, q);
            }
            lg_hist.pop_back();
            la_hist.pop_back();
            seq.ids.pop_back();
            seq.origins.pop_back();
            generated.pop_back();
        }
    };
    rec(rec, 1.0);
    return out;
}

} // namespace lidao::controller
