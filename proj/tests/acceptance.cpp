// Acceptance gate for the laboratory. Runs the eight release criteria and
// prints one pass/fail line each; exits nonzero if any criterion fails.
//
// The numeric tolerances and budgets gating each criterion are pinned below
// as named constants; the run fails loudly rather than degrading silently.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lidao/controller.hpp"
#include "lidao/eval.hpp"
#include "lidao/experiment.hpp"
#include "lidao/seqcore.hpp"
#include "lidao/toylm.hpp"
#include "lidao/toyworld.hpp"
#include "lidao/verify.hpp"

namespace fs = std::filesystem;
using namespace lidao;
using Clock = std::chrono::steady_clock;

namespace {

// ---- pinned tolerances and budgets ------------------------------------------

constexpr double kTolChainRule = 1e-9;     // chain-rule identity residual
constexpr double kTolInterleaved = 1e-10;  // interleaved-independence residual
constexpr double kTolSlack = 1e-10;        // coarsening bound / VI triangle slack
constexpr double kTolGradient = 1e-5;      // analytic vs central-difference rel err
constexpr double kTolForms = 1e-12;        // mixture + decay-weight worked forms
constexpr double kTolAdam = 1e-6;          // first-update magnitude vs learning rate
constexpr double kTolBias = 1e-9;          // reported vs recomputed bias_x100
constexpr double kMinDependenceCut = 0.50; // required relative MI reduction
constexpr int kMinPplWins = 8;             // seeds (of 10) with lower ppl than the
                                           // unscaled-sum baseline
constexpr double kBudgetChainRule = 10.0;  // seconds
constexpr double kBudgetInterleaved = 10.0;
constexpr double kBudgetCoarsening = 20.0;
constexpr double kBudgetGradient = 30.0;
constexpr double kBudgetSteering = 300.0;  // criteria 6 and 7 (shared sweep)
constexpr double kBudgetReporting = 120.0;

int g_failures = 0;

double secs_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void line(int idx, const char* title, bool pass, const std::string& detail, double secs) {
    std::printf("[%s] criterion %d: %s (%s; %.2fs)\n", pass ? "PASS" : "FAIL", idx, title,
                detail.c_str(), secs);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

const verify::CheckResult& find_check(const verify::VerificationReport& rep,
                                      const std::string& name) {
    for (const auto& c : rep.checks)
        if (c.check_name == name) return c;
    static verify::CheckResult missing;
    missing.check_name = name;
    missing.max_residual = std::numeric_limits<double>::infinity();
    missing.pass = false;
    return missing;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---- criteria 1-5: mathematical identities and closed forms ------------------

void run_identity_criteria() {
    const auto t0 = Clock::now();
    verify::VerifyOptions opts;
    opts.seed = 0;
    const auto rep = verify::run_verification(opts);
    const double secs = secs_since(t0);

    {
        const auto& c = find_check(rep, "mi_chain_rule_identity");
        line(1, "stepwise decomposition of sequence-level dependence matches its sum",
             c.pass && c.max_residual < kTolChainRule && secs < kBudgetChainRule,
             fmt("%.0f joints, max residual %.3g, need < %.0e", double(c.instances),
                 c.max_residual, kTolChainRule),
             secs);
    }
    {
        const auto& c = find_check(rep, "interleaved_independence");
        line(2, "unbiased interleaved positions carry zero group information",
             c.pass && c.max_residual < kTolInterleaved && secs < kBudgetInterleaved,
             fmt("%.0f processes, max residual %.3g, need < %.0e", double(c.instances),
                 c.max_residual, kTolInterleaved),
             secs);
    }
    {
        const auto& cb = find_check(rep, "label_coarsening_bound");
        const auto& vi = find_check(rep, "vi_triangle_inequality");
        line(3, "coarse generation labels never overstate joint-label dependence",
             cb.pass && cb.max_residual < kTolSlack && vi.pass && vi.max_residual < kTolSlack &&
                 secs < kBudgetCoarsening,
             fmt("bound slack %.3g, triangle slack %.3g, need < %.0e", cb.max_residual,
                 vi.max_residual, kTolSlack),
             secs);
    }
    {
        const auto& c = find_check(rep, "gradient_finite_difference");
        line(4, "analytic loss gradients match central finite differences",
             c.pass && c.max_residual < kTolGradient && secs < kBudgetGradient,
             fmt("%.0f model/loss triples, max rel err %.3g, need < %.0e", double(c.instances),
                 c.max_residual, kTolGradient),
             secs);
    }
    {
        const auto& mix = find_check(rep, "geometric_mixture_forms");
        const auto& dec = find_check(rep, "decay_weight_example");
        const auto& adam = find_check(rep, "adam_step_magnitude");
        line(5, "closed forms: geometric mixing endpoints, decayed weights, first update",
             mix.pass && mix.max_residual < kTolForms && dec.pass &&
                 dec.max_residual < kTolForms && adam.pass && adam.max_residual < kTolAdam,
             fmt("mixture %.3g, decay %.3g, update %.3g", mix.max_residual, dec.max_residual,
                 adam.max_residual),
             secs);
    }
}

// ---- criteria 6-7: exact behavioural audit of the intervention ---------------

void run_steering_criteria() {
    const auto t0 = Clock::now();

    seqcore::SamplingConfig scfg;  // nucleus 0.9, temperature 1, no penalty
    controller::InterventionConfig base;
    base.max_len = 5;  // keeps the full outcome set exactly enumerable
    base.lr = 100.0;
    base.adam_eps = 1.0;
    base.tau = 0.9;
    base.gamma = 0.5;
    base.elidao_boost = 2.0;

    const int n_seeds = 10;
    double mi_off = 0.0, mi_on = 0.0;
    double h_plain = 0.0, h_override = 0.0;
    int ppl_wins = 0;
    bool ran = true;
    std::string error;

    try {
        for (int seed = 0; seed < n_seeds; ++seed) {
            const auto w = world::make_toy_world(static_cast<std::uint64_t>(seed), 1.0);
            auto summarize = [&](controller::Method m) {
                auto icfg = base;
                icfg.method = m;
                return experiment::exact_method_summary(w.vocab, w.generator, w.evaluator,
                                                        w.prompts, icfg, scfg);
            };
            const auto off = summarize(controller::Method::none);
            const auto sum = summarize(controller::Method::uddia_sum);
            const auto lim = summarize(controller::Method::lidao_min);
            const auto ovr = summarize(controller::Method::elidao_min);

            mi_off += off.mi_property_group;
            mi_on += lim.mi_property_group;
            h_plain += lim.h_joint_gender_given_gen;
            h_override += ovr.h_joint_gender_given_gen;
            if (lim.mean_ppl < sum.mean_ppl) ++ppl_wins;
        }
    } catch (const std::exception& e) {
        ran = false;
        error = e.what();
    }
    const double secs = secs_since(t0);

    if (!ran) {
        line(6, "limited intervention cuts group-property dependence cheaply", false,
             "sweep aborted: " + error, secs);
        line(7, "seed-word override keeps generations attributable to their prompt", false,
             "sweep aborted: " + error, secs);
        return;
    }

    const double cut = 1.0 - mi_on / mi_off;
    line(6, "limited intervention cuts group-property dependence cheaply",
         cut >= kMinDependenceCut && ppl_wins >= kMinPplWins && secs < kBudgetSteering,
         fmt("dependence cut %.1f%% (need >= 50%%), perplexity below unscaled-sum "
             "baseline on %.0f/10 seeds (need >= 8)",
             100.0 * cut, double(ppl_wins)),
         secs);
    line(7, "seed-word override keeps generations attributable to their prompt",
         h_override < h_plain && secs < kBudgetSteering,
         fmt("mean residual group uncertainty %.4f with override vs %.4f without "
             "(strictly smaller required)",
             h_override / n_seeds, h_plain / n_seeds),
         secs);
}

// ---- criterion 8: reporting pipeline ----------------------------------------

void run_reporting_criterion() {
    const auto t0 = Clock::now();
    bool pass = true;
    std::string detail;

    try {
        // Exact perplexity cutoff: keep at the threshold, drop strictly above
        // and drop non-finite values.
        const double inf = std::numeric_limits<double>::infinity();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const std::vector<double> ppls = {12.0, 199.999999, 200.0, 200.00000001, inf, nan, 3.5};
        const auto kept = eval::sanitize_keep_indices(ppls, 200.0);
        const std::vector<std::size_t> expect = {0, 1, 2, 6};
        if (kept != expect) {
            pass = false;
            detail = "perplexity cutoff kept the wrong record set";
        }

        // Full pipeline: byte-stable reruns and a recomputable bias table.
        const fs::path dir = fs::temp_directory_path() / "lidao_acceptance_run";
        fs::remove_all(dir);
        fs::create_directories(dir);
        const auto w = world::make_toy_world(5, 1.0);
        w.vocab.save(dir / "vocab.json");
        w.generator.save(dir / "generator.json");
        w.evaluator.save(dir / "evaluator.json");
        experiment::save_prompts(dir / "prompts.jsonl", w.prompts);

        experiment::ExperimentConfig cfg;
        cfg.vocab_path = dir / "vocab.json";
        cfg.generator_path = dir / "generator.json";
        cfg.evaluator_path = dir / "evaluator.json";
        cfg.prompts_path = dir / "prompts.jsonl";
        cfg.out_dir = dir / "results";
        cfg.methods = {"none", "lidao_min", "uddia_sum"};
        cfg.n_continuations = 3;
        cfg.sanitize_threshold = 200.0;
        cfg.global_seed = 29;
        cfg.base_intervention.max_len = 6;
        cfg.base_intervention.lr = 0.5;
        cfg.base_intervention.adam_eps = 1.0;
        cfg.validate();

        const auto res1 = experiment::run_experiment(cfg);
        const std::string gen1 = slurp(res1.generations_path);
        const std::string csv1 = slurp(res1.report_csv_path);
        const std::string json1 = slurp(res1.report_json_path);
        const std::string sum1 = slurp(res1.summary_path);

        const auto res2 = experiment::run_experiment(cfg);
        if (pass && (slurp(res2.generations_path) != gen1 || slurp(res2.report_csv_path) != csv1 ||
                     slurp(res2.report_json_path) != json1 || slurp(res2.summary_path) != sum1)) {
            pass = false;
            detail = "rerun artifacts not byte-identical";
        }

        // Recompute the whole table from the emitted generations alone.
        const auto vocab = seqcore::Vocabulary::load(cfg.vocab_path);
        const auto evaluator = toylm::ToyLM::load(cfg.evaluator_path);
        const auto rescored = experiment::evaluate_generations_file(res1.generations_path, vocab,
                                                                    evaluator, 200.0);
        if (pass && rescored.to_csv() != csv1) {
            pass = false;
            detail = "independently rescored table differs from the emitted CSV";
        }
        if (pass && rescored.rows.size() != res1.report.rows.size()) {
            pass = false;
            detail = "row count mismatch between run report and rescore";
        }
        double worst = 0.0;
        if (pass) {
            for (std::size_t i = 0; i < rescored.rows.size(); ++i)
                worst = std::max(worst, std::abs(res1.report.rows[i].bias_x100 -
                                                 100.0 * rescored.rows[i].bias));
            if (worst >= kTolBias) {
                pass = false;
                detail = fmt("scaled-bias recomputation off by %.3g (need < %.0e)", worst,
                             kTolBias);
            }
        }
        if (pass)
            detail = fmt("cutoff exact at 200, %.0f report rows recomputed within %.0e, "
                         "reruns byte-identical",
                         double(rescored.rows.size()), kTolBias);
    } catch (const std::exception& e) {
        pass = false;
        detail = std::string("pipeline raised: ") + e.what();
    }
    const double secs = secs_since(t0);
    line(8, "bias report is exact, recomputable and byte-stable",
         pass && secs < kBudgetReporting, detail, secs);
}

} // namespace

int main() {
    std::printf("acceptance run: eight release criteria\n");
    run_identity_criteria();
    run_steering_criteria();
    run_reporting_criterion();
    std::printf("acceptance: %d/8 criteria passed\n", 8 - g_failures);
    return g_failures == 0 ? 0 : 1;
}
