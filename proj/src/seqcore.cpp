#include "lidao/seqcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace lidao::seqcore {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- Vocabulary -------------------------------------------------------------

std::vector<int> Vocabulary::seed_union() const {
    std::set<int> u;
    for (const auto& [group, ids] : seed_sets) u.insert(ids.begin(), ids.end());
    return {u.begin(), u.end()};
}

std::vector<std::string> Vocabulary::group_names() const {
    std::vector<std::string> names;
    names.reserve(seed_sets.size());
    for (const auto& [group, ids] : seed_sets) names.push_back(group);
    return names;
}

double Vocabulary::lexicon_value(const std::string& task, int token, double fallback) const {
    auto it = lexicons.find(task);
    if (it == lexicons.end()) return fallback;
    auto jt = it->second.find(token);
    return jt == it->second.end() ? fallback : jt->second;
}

void Vocabulary::validate() const {
    const int v = size();
    if (v < 2) throw ConfigError("vocabulary needs at least 2 tokens");
    if (bos_id < 0 || bos_id >= v) throw ConfigError("bos_id out of range");
    if (eos_id < 0 || eos_id >= v) throw ConfigError("eos_id out of range");
    if (bos_id == eos_id) throw ConfigError("bos_id must differ from eos_id");
    std::set<std::string> names(tokens.begin(), tokens.end());
    if (static_cast<int>(names.size()) != v) throw ConfigError("duplicate token strings");
    std::set<int> seen;
    for (const auto& [group, ids] : seed_sets) {
        if (!std::is_sorted(ids.begin(), ids.end()))
            throw ConfigError("seed set for group " + group + " is not sorted");
        for (int id : ids) {
            if (id < 0 || id >= v) throw ConfigError("seed token id out of range in group " + group);
            if (!seen.insert(id).second)
                throw ConfigError("seed sets are not disjoint at token " + std::to_string(id));
        }
    }
    for (const auto& [task, table] : lexicons) {
        for (const auto& [id, score] : table) {
            if (id < 0 || id >= v) throw ConfigError("lexicon token id out of range in task " + task);
            if (!(score >= -1.0 && score <= 1.0))
                throw ConfigError("lexicon score outside [-1,1] in task " + task);
        }
    }
}

std::string Vocabulary::to_json_string() const {
    ordered_json j;
    j["tokens"] = tokens;
    j["bos"] = bos_id;
    j["eos"] = eos_id;
    ordered_json seeds = ordered_json::object();
    for (const auto& [group, ids] : seed_sets) seeds[group] = ids;
    j["seed_sets"] = std::move(seeds);
    ordered_json lex = ordered_json::object();
    for (const auto& [task, table] : lexicons) {
        ordered_json t = ordered_json::object();
        for (const auto& [id, score] : table) t[std::to_string(id)] = score;
        lex[task] = std::move(t);
    }
    j["lexicons"] = std::move(lex);
    return j.dump(2) + "\n";
}

Vocabulary Vocabulary::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("vocabulary JSON parse failure: ") + e.what());
    }
    Vocabulary v;
    try {
        v.tokens = j.at("tokens").get<std::vector<std::string>>();
        v.bos_id = j.at("bos").get<int>();
        v.eos_id = j.at("eos").get<int>();
        for (const auto& [group, ids] : j.at("seed_sets").items()) {
            auto vec = ids.get<std::vector<int>>();
            std::sort(vec.begin(), vec.end());
            v.seed_sets[group] = std::move(vec);
        }
        if (j.contains("lexicons")) {
            for (const auto& [task, table] : j.at("lexicons").items()) {
                std::map<int, double> t;
                for (const auto& [id, score] : table.items())
                    t[std::stoi(id)] = score.get<double>();
                v.lexicons[task] = std::move(t);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("vocabulary JSON schema failure: ") + e.what());
    }
    v.validate();
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write vocabulary file: " + path.string());
    out << to_json_string();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read vocabulary file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

// ---- TokenSequence ----------------------------------------------------------

std::vector<int> TokenSequence::generated_ids() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (origins[i] == TokenOrigin::generated) out.push_back(ids[i]);
    return out;
}

std::size_t TokenSequence::n_generated() const {
    std::size_t n = 0;
    for (TokenOrigin o : origins)
        if (o == TokenOrigin::generated) ++n;
    return n;
}

// ---- NextTokenDistribution --------------------------------------------------

bool NextTokenDistribution::valid(double tol) const {
    if (probs.empty()) return false;
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) return false;
        sum += p;
    }
    return std::abs(sum - 1.0) <= tol;
}

NextTokenDistribution softmax(std::span<const double> logits) {
    NextTokenDistribution out;
    out.probs.resize(logits.size(), 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (double z : logits) mx = std::max(mx, z);
    if (!std::isfinite(mx)) throw DegenerateDistributionError("softmax over all -inf logits");
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double e = std::exp(logits[i] - mx);
        out.probs[i] = e;
        sum += e;
    }
    for (double& p : out.probs) p /= sum;
    return out;
}

// ---- SamplingConfig ---------------------------------------------------------

void SamplingConfig::validate() const {
    if (!(coverage > 0.0 && coverage <= 1.0)) throw ConfigError("coverage must lie in (0,1]");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(repetition_penalty >= 1.0)) throw ConfigError("repetition_penalty must be >= 1");
}

// ---- sampling ops -----------------------------------------------------------

std::vector<double> apply_repetition_penalty(std::vector<double> logits,
                                             std::span<const int> history,
                                             double penalty) {
    if (penalty == 1.0) return logits;
    std::set<int> seen(history.begin(), history.end());
    for (int tok : seen) {
        if (tok < 0 || tok >= static_cast<int>(logits.size())) continue;
        double& z = logits[tok];
        if (z > 0.0) z /= penalty;
        else if (z < 0.0) z *= penalty;
    }
    return logits;
}

NextTokenDistribution nucleus_filter(const NextTokenDistribution& dist, double coverage) {
    const std::size_t n = dist.probs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dist.probs[a] > dist.probs[b];  // descending; stable keeps lower index first on ties
    });

    NextTokenDistribution out;
    out.probs.assign(n, 0.0);
    double cum = 0.0;
    double kept = 0.0;
    for (std::size_t i : order) {
        out.probs[i] = dist.probs[i];
        kept += dist.probs[i];
        cum += dist.probs[i];
        if (cum >= coverage - 1e-12) break;
    }
    if (kept <= 0.0) throw DegenerateDistributionError("nucleus filter kept no probability mass");
    for (double& p : out.probs) p /= kept;
    return out;
}

int sample_token(const NextTokenDistribution& dist, std::mt19937_64& rng) {
    double total = 0.0;
    for (double p : dist.probs) total += p;
    if (!(total > 0.0)) throw DegenerateDistributionError("sample_token on an all-zero distribution");
    // 53-bit uniform in [0,1) taken straight from the generator, so draws are
    // reproducible across standard-library implementations.
    const double u = std::ldexp(static_cast<double>(rng() >> 11), -53) * total;
    double cum = 0.0;
    int last_nonzero = -1;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        if (dist.probs[i] <= 0.0) continue;
        cum += dist.probs[i];
        last_nonzero = static_cast<int>(i);
        if (u < cum) return static_cast<int>(i);
    }
    return last_nonzero;  // guard against u == total after rounding
}

NextTokenDistribution pipeline_distribution(const NextTokenDistribution& dist,
                                            std::span<const int> history,
                                            const SamplingConfig& cfg) {
    cfg.validate();
    NextTokenDistribution shaped = dist;
    if (cfg.repetition_penalty != 1.0 || cfg.temperature != 1.0) {
        std::vector<double> logits(dist.probs.size());
        for (std::size_t i = 0; i < dist.probs.size(); ++i)
            logits[i] = dist.probs[i] > 0.0 ? std::log(dist.probs[i])
                                            : -std::numeric_limits<double>::infinity();
        logits = apply_repetition_penalty(std::move(logits), history, cfg.repetition_penalty);
        for (double& z : logits) z /= cfg.temperature;
        shaped = softmax(logits);
    }
    if (cfg.coverage >= 1.0) return shaped;
    return nucleus_filter(shaped, cfg.coverage);
}

} // namespace lidao::seqcore
