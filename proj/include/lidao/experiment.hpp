#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lidao/controller.hpp"
#include "lidao/errors.hpp"
#include "lidao/eval.hpp"
#include "lidao/seqcore.hpp"
#include "lidao/toylm.hpp"
#include "lidao/toyworld.hpp"

namespace lidao::experiment {

// ---- configuration ----------------------------------------------------------

// Loaded from a single JSON document. Paths are resolved against the config
// file's directory; "intervention" is the default flat parameter table and
// "intervention_overrides" maps method name -> partial table.
struct ExperimentConfig {
    std::filesystem::path vocab_path;
    std::filesystem::path generator_path;
    std::filesystem::path evaluator_path;
    std::filesystem::path prompts_path;
    std::filesystem::path out_dir;

    std::vector<std::string> methods;
    int n_continuations = 5;
    double sanitize_threshold = 200.0;
    std::uint64_t global_seed = 0;

    seqcore::SamplingConfig sampling;
    controller::InterventionConfig base_intervention;
    std::map<std::string, std::map<std::string, double>> method_overrides;

    void validate() const;  // throws ConfigError

    // Default table + the method's override table, with method set; validated.
    controller::InterventionConfig intervention_for(const std::string& method) const;

    static ExperimentConfig from_json_string(const std::string& text,
                                             const std::filesystem::path& base_dir);
    static ExperimentConfig load(const std::filesystem::path& path);
};

// ---- prompt dataset IO -------------------------------------------------------

// JSON-lines: {"pair_id": int, "group": "male"|"female", "tokens": [int, ...]}
std::vector<world::PromptRecord> load_prompts(const std::filesystem::path& path);
void save_prompts(const std::filesystem::path& path,
                  const std::vector<world::PromptRecord>& prompts);

// Each pair_id must appear exactly once per group (throws ConfigError).
void validate_prompt_pairs(const std::vector<world::PromptRecord>& prompts);

// ---- deterministic per-cell seeds -------------------------------------------

// Hash chain over (global_seed, method, pair_id, continuation_index). The two
// halves of a prompt pair share the stream: common random numbers across
// groups make within-pair comparisons less noisy.
std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& method, int pair_id,
                          int continuation_index);

// ---- results ----------------------------------------------------------------

// One work unit: method x prompt x continuation.
struct CellResult {
    std::string method;
    int pair_id = 0;
    std::string group;
    int continuation = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    controller::GenerationRecord record;
    eval::ScoredRecord scored;
};

struct ExperimentResult {
    std::vector<CellResult> cells;  // deterministic order: method, prompt, continuation
    eval::BiasReport report;
    std::string infoth_summary_json;

    std::filesystem::path generations_path;
    std::filesystem::path report_csv_path;
    std::filesystem::path report_json_path;
    std::filesystem::path summary_path;
};

// Full pipeline: generate -> score + label (both modes) -> sanitize ->
// aggregate. Writes generations.jsonl, report.csv, report.json, and
// infoth_summary.json (exact dependence measures when the enumeration budget
// allows) into config.out_dir. Cell failures are recorded, not fatal.
// Worker count: LIDAO_LAB_THREADS when set, else hardware concurrency.
// Rerunning the same config rewrites byte-identical outputs.
ExperimentResult run_experiment(const ExperimentConfig& config);

// ---- exact process summaries ------------------------------------------------

// Exact (enumeration-based) measures of one intervention method over the
// prompt mixture: I(property; group) over generations, H(joint-mode gender
// label | generation-mode gender label), and the exact mean perplexity under
// the evaluator. Throws BudgetError when |V|^max_len exceeds the budget.
struct ExactMethodSummary {
    std::string method;
    double mi_property_group = 0.0;
    double h_joint_gender_given_gen = 0.0;
    double mean_ppl = 0.0;
    std::size_t n_outcomes = 0;
};

ExactMethodSummary exact_method_summary(const seqcore::Vocabulary& vocab,
                                        const toylm::ToyLM& generator,
                                        const toylm::ToyLM& evaluator,
                                        const std::vector<world::PromptRecord>& prompts,
                                        const controller::InterventionConfig& icfg,
                                        const seqcore::SamplingConfig& scfg);

// Re-score an existing generations file and rebuild the report: the
// standalone evaluate entry point. Methods appear in first-occurrence order.
eval::BiasReport evaluate_generations_file(const std::filesystem::path& generations_path,
                                           const seqcore::Vocabulary& vocab,
                                           const toylm::ToyLM& evaluator,
                                           double sanitize_threshold);

} // namespace lidao::experiment
