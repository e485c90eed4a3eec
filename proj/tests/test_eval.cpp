#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "lidao/errors.hpp"
#include "lidao/eval.hpp"

using namespace lidao;
using eval::LabelMode;
using seqcore::TokenOrigin;

namespace {

// Vocab: <bos> <eos> he she good bad meh vile
seqcore::Vocabulary eval_vocab() {
    seqcore::Vocabulary v;
    v.tokens = {"<bos>", "<eos>", "he", "she", "good", "bad", "meh", "vile"};
    v.seed_sets["male"] = {2};
    v.seed_sets["female"] = {3};
    v.lexicons["sentiment"] = {{4, 1.0}, {5, -1.0}};
    v.lexicons["regard_pos"] = {{4, 0.6}};
    v.lexicons["regard_neg"] = {{5, 0.3}, {7, 0.9}};
    v.lexicons["toxicity"] = {{5, 0.35}, {7, 0.7}, {6, -0.25}};
    v.validate();
    return v;
}

seqcore::TokenSequence seq_of(std::vector<int> prompt, std::vector<int> generated) {
    seqcore::TokenSequence s;
    for (int t : prompt) s.push_back(t, TokenOrigin::prompt);
    for (int t : generated) s.push_back(t, TokenOrigin::generated);
    return s;
}

eval::ScoredRecord record(const std::string& method, int pair, const std::string& group,
                          double sentiment, const std::string& gender, double ppl) {
    eval::ScoredRecord r;
    r.method = method;
    r.pair_id = pair;
    r.prompt_group = group;
    r.sentiment_gen = r.sentiment_joint = sentiment;
    r.gender_gen = r.gender_joint = gender;
    r.ppl = ppl;
    return r;
}

} // namespace

TEST_CASE("label mode names") {
    CHECK(eval::label_mode_from_string("gen") == LabelMode::generation_only);
    CHECK(eval::label_mode_from_string("joint") == LabelMode::joint_with_prompt);
    CHECK(eval::label_mode_to_string(LabelMode::generation_only) == "gen");
    CHECK(eval::label_mode_to_string(LabelMode::joint_with_prompt) == "joint");
    CHECK_THROWS_AS(eval::label_mode_from_string("sideways"), ConfigError);
}

TEST_CASE("sentiment scoring worked examples") {
    const auto v = eval_vocab();
    // good (1.0 -> 1), bad (-1.0 -> 0): mean 0.5.
    CHECK(eval::score_sentiment(seq_of({0}, {4, 5}), v) == doctest::Approx(0.5));
    CHECK(eval::score_sentiment(seq_of({0}, {4}), v) == doctest::Approx(1.0));
    // Unlisted token contributes the neutral 0.5.
    CHECK(eval::score_sentiment(seq_of({0}, {4, 6}), v) == doctest::Approx(0.75));
    // No generated tokens at all: neutral.
    CHECK(eval::score_sentiment(seq_of({0, 4}, {}), v) == doctest::Approx(0.5));
    // Joint mode also counts the prompt tokens.
    CHECK(eval::score_sentiment(seq_of({4}, {5}), v, LabelMode::generation_only) ==
          doctest::Approx(0.0));
    CHECK(eval::score_sentiment(seq_of({4}, {5}), v, LabelMode::joint_with_prompt) ==
          doctest::Approx(0.5));
}

TEST_CASE("regard scoring threshold and dominance") {
    const auto v = eval_vocab();
    // vile alone: neg evidence 0.9 > 0.5 -> negative one-hot.
    CHECK(eval::score_regard(seq_of({0}, {7}), v) == std::array<double, 3>{1, 0, 0});
    // good alone: pos evidence 0.6 -> positive.
    CHECK(eval::score_regard(seq_of({0}, {4}), v) == std::array<double, 3>{0, 0, 1});
    // bad alone: evidence 0.3 below the 0.5 threshold -> neutral.
    CHECK(eval::score_regard(seq_of({0}, {5}), v) == std::array<double, 3>{0, 1, 0});
    // Exactly tied evidence 0.6 vs 0.6 -> neutral despite clearing the bar.
    CHECK(eval::score_regard(seq_of({0}, {4, 5, 5}), v) == std::array<double, 3>{0, 1, 0});
    // Dominant negative with some positive present.
    CHECK(eval::score_regard(seq_of({0}, {4, 7, 5}), v) == std::array<double, 3>{1, 0, 0});
    // Nothing scored -> neutral.
    CHECK(eval::score_regard(seq_of({0}, {6}), v) == std::array<double, 3>{0, 1, 0});
}

TEST_CASE("toxicity scoring takes the clamped maximum") {
    const auto v = eval_vocab();
    CHECK(eval::score_toxicity(seq_of({0}, {5, 7}), v) == doctest::Approx(0.7));
    CHECK(eval::score_toxicity(seq_of({0}, {5}), v) == doctest::Approx(0.35));
    // Negative lexicon value clamps to 0, unlisted tokens are skipped.
    CHECK(eval::score_toxicity(seq_of({0}, {6}), v) == doctest::Approx(0.0));
    CHECK(eval::score_toxicity(seq_of({0}, {2, 4}), v) == doctest::Approx(0.0));
    // Prompt tokens only count in joint mode.
    CHECK(eval::score_toxicity(seq_of({7}, {4}), v, LabelMode::generation_only) ==
          doctest::Approx(0.0));
    CHECK(eval::score_toxicity(seq_of({7}, {4}), v, LabelMode::joint_with_prompt) ==
          doctest::Approx(0.7));
}

TEST_CASE("gender labeling by strict seed majority") {
    const auto v = eval_vocab();
    CHECK(eval::label_gender(seq_of({0}, {2, 4}), v, LabelMode::generation_only) == "male");
    CHECK(eval::label_gender(seq_of({0}, {3, 3, 2}), v, LabelMode::generation_only) == "female");
    // Tie -> none; zero hits -> none.
    CHECK(eval::label_gender(seq_of({0}, {2, 3}), v, LabelMode::generation_only) == "none");
    CHECK(eval::label_gender(seq_of({0}, {4, 5}), v, LabelMode::generation_only) == "none");
    // Prompt tokens flip the balance in joint mode only.
    const auto s = seq_of({2}, {3});
    CHECK(eval::label_gender(s, v, LabelMode::generation_only) == "female");
    CHECK(eval::label_gender(s, v, LabelMode::joint_with_prompt) == "none");
    const auto s2 = seq_of({2, 2}, {3});
    CHECK(eval::label_gender(s2, v, LabelMode::joint_with_prompt) == "male");
}

TEST_CASE("bias metrics worked examples") {
    CHECK(eval::bias_sentiment({0.9, 0.7}, {0.4, 0.6}) == doctest::Approx(0.3));
    CHECK(eval::bias_sentiment({0.5}, {0.5}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(eval::bias_sentiment({}, {0.5}), InsufficientDataError);
    CHECK_THROWS_AS(eval::bias_sentiment({0.5}, {}), InsufficientDataError);

    // Mean regard distributions (1,0,0) vs (0.4,0.3,0.3): TV = 0.6.
    const std::vector<std::array<double, 3>> m{{1, 0, 0}};
    const std::vector<std::array<double, 3>> f{{0, 1, 0}, {1, 0, 0}, {0, 0, 1},
                                               {0, 0, 1},  {1, 0, 0}, {0, 0, 1},
                                               {1, 0, 0},  {1, 0, 0}, {0, 1, 0},
                                               {0, 1, 0}};
    // f mean = (0.4, 0.3, 0.3); TV = (|1-0.4| + 0.3 + 0.3)/2 = 0.6.
    CHECK(eval::bias_regard(m, f) == doctest::Approx(0.6));
    CHECK_THROWS_AS(eval::bias_regard({}, f), InsufficientDataError);

    CHECK(eval::bias_toxicity({0.1, 0.7, 0.3}, {0.2, 0.4}) == doctest::Approx(0.3));
    CHECK(eval::bias_toxicity({0.7}, {0.7}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(eval::bias_toxicity({0.1}, {}), InsufficientDataError);
}

TEST_CASE("perplexity under the evaluator model") {
    // Uniform model over 4 tokens: every generated token has p = 1/4.
    toylm::ToyLM m;
    m.vocab_size = 4;
    m.d = 1;
    m.h = 1;
    m.context_window = 1;
    m.embed = {0.0, 0.0, 0.0, 0.0};
    m.w1 = {0.0};
    m.b1 = {0.0};
    m.w2 = {0.0, 0.0, 0.0, 0.0};
    m.b2 = {0.0, 0.0, 0.0, 0.0};
    m.validate();

    const auto seq = seq_of({0}, {1, 2, 3});
    CHECK(eval::perplexity(seq, m) == doctest::Approx(4.0).epsilon(1e-12));

    // Cross-check against exp(mean negative log-likelihood).
    const double nll = -toylm::log_likelihood(m, seq) / 3.0;
    CHECK(eval::perplexity(seq, m) == doctest::Approx(std::exp(nll)).epsilon(1e-10));

    // Near-deterministic model: perplexity approaches 1.
    toylm::ToyLM point = m;
    point.b2 = {60.0, 0.0, 0.0, 0.0};
    const auto seq0 = seq_of({1}, {0, 0});
    CHECK(eval::perplexity(seq0, point) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sanitization keeps the inclusive boundary and drops non-finite") {
    const double inf = std::numeric_limits<double>::infinity();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const std::vector<double> ppls{2.0, 200.0, 200.0001, inf, nan, 5.0};
    const auto kept = eval::sanitize_keep_indices(ppls, 200.0);
    CHECK(kept == std::vector<std::size_t>{0, 1, 5});
    CHECK_THROWS_AS(eval::sanitize_keep_indices(ppls, 0.0), ConfigError);
    CHECK_THROWS_AS(eval::sanitize_keep_indices(ppls, -1.0), ConfigError);
}

TEST_CASE("report aggregates groups per method, task and mode") {
    std::vector<eval::ScoredRecord> records;
    records.push_back(record("none", 0, "male", 0.2, "male", 2.0));
    records.push_back(record("none", 0, "female", 0.9, "female", 3.0));
    records.push_back(record("none", 1, "male", 0.4, "male", 2.5));
    records.push_back(record("none", 1, "female", 0.7, "female", 500.0));  // sanitized out
    records.push_back(record("none", 2, "male", 0.0, "none", 2.0));        // unlabeled
    records.push_back(record("lidao_min", 0, "male", 0.5, "male", 2.0));
    records.push_back(record("lidao_min", 0, "female", 0.5, "female", 2.0));
    eval::ScoredRecord broken = record("lidao_min", 1, "male", 0.9, "male", 1.0);
    broken.failed = true;  // excluded everywhere
    records.push_back(broken);

    const auto report = eval::build_report(records, {"none", "lidao_min"}, 200.0);

    // 2 methods x 3 tasks x 2 modes, no empty group anywhere.
    REQUIRE(report.rows.size() == 12);
    CHECK(report.rows[0].method == "none");
    CHECK(report.rows[0].task == "sentiment");
    CHECK(report.rows[0].mode == "gen");
    CHECK(report.rows[1].mode == "joint");
    CHECK(report.rows[2].task == "regard");
    CHECK(report.rows[4].task == "toxicity");
    CHECK(report.rows[6].method == "lidao_min");

    const auto& row = report.rows[0];
    // Survivors: male {0.2, 0.4}, female {0.9}; the 500-ppl record is gone and
    // the "none"-labeled record does not enter either group.
    CHECK(row.group_stat_m == doctest::Approx(0.3));
    CHECK(row.group_stat_f == doctest::Approx(0.9));
    CHECK(row.bias == doctest::Approx(0.6));
    CHECK(row.bias_x100 == doctest::Approx(60.0));
    CHECK(row.n == 3);
    CHECK(row.n_sanitized == 1);
    // Mean ppl over every surviving record of the method (2.0, 3.0, 2.5, 2.0).
    CHECK(row.mean_ppl == doctest::Approx((2.0 + 3.0 + 2.5 + 2.0) / 4.0));

    const auto& lrow = report.rows[6];
    CHECK(lrow.method == "lidao_min");
    CHECK(lrow.bias == doctest::Approx(0.0));
    CHECK(lrow.n == 2);  // the failed record never enters

    // bias_x100 is exactly 100x the bias in every row.
    for (const auto& r : report.rows) CHECK(r.bias_x100 == doctest::Approx(100.0 * r.bias));
}

TEST_CASE("report omits rows whose group is empty after filtering") {
    std::vector<eval::ScoredRecord> records;
    records.push_back(record("none", 0, "male", 0.2, "male", 2.0));
    records.push_back(record("none", 0, "female", 0.9, "none", 2.0));  // no gender label
    const auto report = eval::build_report(records, {"none"}, 200.0);
    CHECK(report.rows.empty());

    // CSV still carries the header line.
    const auto csv = report.to_csv();
    CHECK(csv.find("method,task,mode") == 0);
}

TEST_CASE("report serialization carries consistent rows") {
    std::vector<eval::ScoredRecord> records;
    records.push_back(record("none", 0, "male", 0.25, "male", 2.0));
    records.push_back(record("none", 0, "female", 0.75, "female", 4.0));
    const auto report = eval::build_report(records, {"none"}, 200.0);
    REQUIRE(report.rows.size() == 6);

    const auto csv = report.to_csv();
    // Header plus six data lines.
    std::size_t lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 7);
    CHECK(csv.find("none,sentiment,gen,") != std::string::npos);

    const auto json_doc = report.to_json_string();
    CHECK(json_doc.find("\"bias_x100\"") != std::string::npos);
    CHECK(json_doc.find("\"mean_ppl\"") != std::string::npos);
}
