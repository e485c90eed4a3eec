#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lidao/errors.hpp"
#include "lidao/seqcore.hpp"
#include "lidao/toylm.hpp"

namespace lidao::eval {

// ---- labeling mode ----------------------------------------------------------

// generation_only scores/labels the generated tokens; joint_with_prompt also
// counts prompt tokens.
enum class LabelMode { generation_only, joint_with_prompt };
LabelMode label_mode_from_string(const std::string& name);  // throws ConfigError
std::string label_mode_to_string(LabelMode mode);

// ---- task scorers -----------------------------------------------------------

// Mean over scored tokens of (sentiment + 1) / 2; unlisted tokens count 0.5.
double score_sentiment(const seqcore::TokenSequence& seq, const seqcore::Vocabulary& vocab,
                       LabelMode mode = LabelMode::generation_only);

// One-hot (negative, neutral, positive): the class whose summed lexicon
// evidence exceeds 0.5 and dominates the other; neutral otherwise (ties too).
std::array<double, 3> score_regard(const seqcore::TokenSequence& seq,
                                   const seqcore::Vocabulary& vocab,
                                   LabelMode mode = LabelMode::generation_only);

// Max over scored tokens of the toxicity lexicon value clamped to [0,1];
// 0 when no token is listed.
double score_toxicity(const seqcore::TokenSequence& seq, const seqcore::Vocabulary& vocab,
                      LabelMode mode = LabelMode::generation_only);

// Strict majority of seed-set hits; "none" on a tie or zero hits.
std::string label_gender(const seqcore::TokenSequence& seq, const seqcore::Vocabulary& vocab,
                         LabelMode mode);

// ---- bias metrics -----------------------------------------------------------

// |mean(a) - mean(b)|. Throws InsufficientDataError naming the empty group.
double bias_sentiment(const std::vector<double>& group_m, const std::vector<double>& group_f);

// Total variation between the mean 3-way regard distributions.
double bias_regard(const std::vector<std::array<double, 3>>& group_m,
                   const std::vector<std::array<double, 3>>& group_f);

// |max(a) - max(b)| (worst-case statistic per group).
double bias_toxicity(const std::vector<double>& group_m, const std::vector<double>& group_f);

// ---- perplexity & sanitization ----------------------------------------------

// exp(-log_likelihood / n_generated) under the evaluator model; +inf when a
// generated token has zero probability.
double perplexity(const seqcore::TokenSequence& seq, const toylm::ToyLM& eval_model);

// Indices of records whose ppl is <= threshold (strictly greater are dropped,
// +inf always dropped).
std::vector<std::size_t> sanitize_keep_indices(const std::vector<double>& ppls, double threshold);

// ---- scored records & report ------------------------------------------------

struct ScoredRecord {
    std::string method;
    int pair_id = 0;
    std::string prompt_group;
    double sentiment_gen = 0.5, sentiment_joint = 0.5;
    std::array<double, 3> regard_gen{0, 1, 0}, regard_joint{0, 1, 0};
    double toxicity_gen = 0.0, toxicity_joint = 0.0;
    std::string gender_gen = "none";
    std::string gender_joint = "none";
    double ppl = 0.0;
    bool failed = false;  // cell recorded but excluded from every statistic
};

struct BiasReportRow {
    std::string method;
    std::string task;  // sentiment | regard | toxicity
    std::string mode;  // gen | joint
    double group_stat_m = 0.0;  // scalar stat (mean / NNRe share / max)
    double group_stat_f = 0.0;
    double bias = 0.0;
    double bias_x100 = 0.0;
    double mean_ppl = 0.0;
    std::size_t n = 0;            // records entering the metric
    std::size_t n_sanitized = 0;  // records dropped by the ppl rule
};

struct BiasReport {
    std::vector<BiasReportRow> rows;

    std::string to_csv() const;
    std::string to_json_string() const;
};

// Build the per-(method, task, mode) report from scored records. Sanitization
// runs first; gender labels then split the survivors into the two groups, and
// records labeled "none" are excluded from group statistics. Rows whose male
// or female group ends up empty are omitted (partial tables instead of
// undefined metrics). Row order: method (given order), then task
// (sentiment, regard, toxicity), then mode (gen, joint).
BiasReport build_report(const std::vector<ScoredRecord>& records,
                        const std::vector<std::string>& methods, double sanitize_threshold);

} // namespace lidao::eval
