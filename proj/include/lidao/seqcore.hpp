#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lidao/errors.hpp"

namespace lidao::seqcore {

// ---- vocabulary -------------------------------------------------------------

// Token inventory with BOS/EOS markers, per-group seed-word sets and
// per-task attribute lexicons (scores in [-1, 1]).
struct Vocabulary {
    std::vector<std::string> tokens;
    int bos_id = 0;
    int eos_id = 1;
    // group name -> sorted token ids (pairwise disjoint across groups)
    std::map<std::string, std::vector<int>> seed_sets;
    // task name -> token id -> score in [-1, 1]
    std::map<std::string, std::map<int, double>> lexicons;

    int size() const { return static_cast<int>(tokens.size()); }

    // Sorted union of all seed sets.
    std::vector<int> seed_union() const;

    // Group names in iteration order (sorted by map key).
    std::vector<std::string> group_names() const;

    // Lexicon lookup; returns fallback when the token has no entry.
    double lexicon_value(const std::string& task, int token, double fallback) const;

    // Throws ConfigError on any invariant violation.
    void validate() const;

    std::string to_json_string() const;
    static Vocabulary from_json_string(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);
};

// ---- sequences --------------------------------------------------------------

enum class TokenOrigin : std::uint8_t { prompt, generated };

// Token ids plus a per-position origin flag (prompt vs generated).
struct TokenSequence {
    std::vector<int> ids;
    std::vector<TokenOrigin> origins;

    void push_back(int id, TokenOrigin origin) {
        ids.push_back(id);
        origins.push_back(origin);
    }
    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }

    std::vector<int> generated_ids() const;
    std::size_t n_generated() const;
};

// ---- distributions ----------------------------------------------------------

// Probability vector over the vocabulary.
struct NextTokenDistribution {
    std::vector<double> probs;

    bool valid(double tol = 1e-9) const;
};

NextTokenDistribution softmax(std::span<const double> logits);

// ---- sampling ---------------------------------------------------------------

struct SamplingConfig {
    double coverage = 0.9;            // nucleus mass in (0, 1]
    double temperature = 1.0;         // > 0
    double repetition_penalty = 1.0;  // >= 1
    std::uint64_t seed = 0;

    void validate() const;  // throws ConfigError
};

// Divide positive logits / multiply negative logits of history tokens.
std::vector<double> apply_repetition_penalty(std::vector<double> logits,
                                             std::span<const int> history,
                                             double penalty);

// Keep the smallest descending-probability prefix with cumulative mass >=
// coverage (ties broken by lower token index), zero the rest, renormalize.
NextTokenDistribution nucleus_filter(const NextTokenDistribution& dist, double coverage);

// Inverse-CDF draw. Throws DegenerateDistributionError when no mass exists.
int sample_token(const NextTokenDistribution& dist, std::mt19937_64& rng);

// Full post-processing chain on a final token distribution:
// log-probs -> repetition penalty -> temperature -> softmax -> nucleus.
// With coverage=1, temperature=1, penalty=1 this is the exact identity.
NextTokenDistribution pipeline_distribution(const NextTokenDistribution& dist,
                                            std::span<const int> history,
                                            const SamplingConfig& cfg);

} // namespace lidao::seqcore
