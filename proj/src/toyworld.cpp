#include "lidao/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lidao/attr.hpp"
#include "lidao/eval.hpp"

namespace lidao::world {

namespace {

// ---- canonical layout -------------------------------------------------------

constexpr int kBos = 0, kEos = 1;
constexpr int kHe = 2, kMan = 3, kShe = 4, kWoman = 5;
constexpr int kGood = 6, kNice = 7, kBad = 8, kAwful = 9;
constexpr int kThe = 10, kOne = 11, kWalks = 12, kStays = 13;
constexpr int kV = 14, kD = 8, kH = 8;

// One embedding axis per token class.
constexpr int kAxisMale = 0, kAxisFemale = 1, kAxisPos = 2, kAxisNeg = 3;
constexpr int kAxisNeutralA = 4, kAxisNeutralB = 5, kAxisBos = 6, kAxisEos = 7;

constexpr int kTokenAxis[kV] = {
    kAxisBos,      kAxisEos,      kAxisMale, kAxisMale,     kAxisFemale,   kAxisFemale,
    kAxisPos,      kAxisPos,      kAxisNeg,  kAxisNeg,      kAxisNeutralA, kAxisNeutralA,
    kAxisNeutralB, kAxisNeutralB,
};

// Subject-side tokens ("A": gendered + neutral nouns) follow property-side
// states; property-side tokens ("B": properties + predicates) follow
// subject-side states, so generations alternate the two classes.
bool is_subject_axis(int axis) {
    return axis == kAxisMale || axis == kAxisFemale || axis == kAxisNeutralA || axis == kAxisBos ||
           axis == kAxisEos;
}

bool is_subject_token(int tok) {
    const int axis = kTokenAxis[tok];
    return axis == kAxisMale || axis == kAxisFemale || axis == kAxisNeutralA;
}

bool is_property_token(int tok) {
    const int axis = kTokenAxis[tok];
    return axis == kAxisPos || axis == kAxisNeg || axis == kAxisNeutralB;
}

// Cross-class transitions sit far enough below the in-class logits that they
// fall under the enumeration prune floor; EOS is reachable but negligible.
constexpr double kBlockedLogit = -40.0;
constexpr double kEosLogit = -30.0;
constexpr double kBosLogit = -40.0;
constexpr double kSaturationGain = 50.0;  // w1 diagonal; tanh saturates exactly
constexpr double kCouplingKappa = 2.2;    // full-strength gender<->property tilt
constexpr double kLogitJitter = 0.3;      // per-target, shared across sources
constexpr double kMagnitudeJitter = 0.05;
constexpr double kEvalSmoothing = 0.85;   // evaluator = smoothed clean tables

double uniform01(std::mt19937_64& rng) {
    return std::ldexp(static_cast<double>(rng() >> 11), -53);
}

double jitter(std::mt19937_64& rng, double half_width) {
    return (2.0 * uniform01(rng) - 1.0) * half_width;
}

seqcore::Vocabulary build_vocab() {
    seqcore::Vocabulary vocab;
    vocab.tokens = {"<bos>", "<eos>", "he",    "man", "she", "woman", "good",
                    "nice",  "bad",   "awful", "the", "one", "walks", "stays"};
    vocab.bos_id = kBos;
    vocab.eos_id = kEos;
    vocab.seed_sets["male"] = {kHe, kMan};
    vocab.seed_sets["female"] = {kShe, kWoman};
    vocab.lexicons["sentiment"] = {{kGood, 1.0}, {kNice, 0.8}, {kBad, -1.0}, {kAwful, -0.8}};
    vocab.lexicons["regard_pos"] = {{kGood, 0.6}, {kNice, 0.6}};
    vocab.lexicons["regard_neg"] = {{kBad, 0.6}, {kAwful, 0.9}};
    vocab.lexicons["toxicity"] = {{kBad, 0.35}, {kAwful, 0.7}};
    vocab.validate();
    return vocab;
}

// The clean transition logit table: rows = target token, cols = source axis.
// bias_strength scales the gender->property and property->gender tilts.
std::vector<double> clean_w2(double bias_strength) {
    std::vector<double> w2(static_cast<std::size_t>(kV) * kH, 0.0);
    auto at = [&w2](int target, int src_axis) -> double& {
        return w2[static_cast<std::size_t>(target) * kH + src_axis];
    };
    for (int target = 0; target < kV; ++target) {
        for (int axis = 0; axis < kH; ++axis) {
            if (target == kBos || target == kEos) {
                at(target, axis) = 0.0;  // handled by b2
            } else if (is_subject_token(target)) {
                at(target, axis) = is_subject_axis(axis) ? kBlockedLogit : 0.0;
            } else {
                at(target, axis) = is_subject_axis(axis) ? 0.0 : kBlockedLogit;
            }
        }
    }
    const double tilt = kCouplingKappa * bias_strength;
    // gendered state -> property tilt (male to negative, female to positive)
    at(kBad, kAxisMale) += tilt;
    at(kAwful, kAxisMale) += tilt;
    at(kGood, kAxisMale) -= tilt;
    at(kNice, kAxisMale) -= tilt;
    at(kGood, kAxisFemale) += tilt;
    at(kNice, kAxisFemale) += tilt;
    at(kBad, kAxisFemale) -= tilt;
    at(kAwful, kAxisFemale) -= tilt;
    // property state -> gendered-subject tilt (keeps the chain's gender parity)
    at(kHe, kAxisNeg) += tilt;
    at(kMan, kAxisNeg) += tilt;
    at(kShe, kAxisNeg) -= tilt;
    at(kWoman, kAxisNeg) -= tilt;
    at(kShe, kAxisPos) += tilt;
    at(kWoman, kAxisPos) += tilt;
    at(kHe, kAxisPos) -= tilt;
    at(kMan, kAxisPos) -= tilt;
    return w2;
}

std::vector<double> clean_b2() {
    std::vector<double> b2(kV, 0.0);
    b2[kBos] = kBosLogit;
    b2[kEos] = kEosLogit;
    return b2;
}

// Axis-aligned embedding with the given magnitude. Magnitude stays well above
// the tanh saturation knee so hidden states are exact class indicators; any
// off-axis component would leak through tanh, so only magnitudes vary.
void set_embedding(std::vector<double>& embed, int token, double magnitude) {
    for (int j = 0; j < kD; ++j) embed[static_cast<std::size_t>(token) * kD + j] = 0.0;
    embed[static_cast<std::size_t>(token) * kD + kTokenAxis[token]] = magnitude;
}

std::vector<double> identity_gain(double gain) {
    std::vector<double> w1(static_cast<std::size_t>(kH) * kD, 0.0);
    for (int i = 0; i < kH; ++i) w1[static_cast<std::size_t>(i) * kD + i] = gain;
    return w1;
}

std::vector<double> normalized_mean_embedding(const toylm::ToyLM& model,
                                              const std::vector<int>& tokens) {
    if (tokens.empty()) throw DegenerateSeedSetError("empty token class for a prototype");
    std::vector<double> mean(model.d, 0.0);
    for (int tok : tokens) {
        auto e = model.embedding(tok);
        for (int j = 0; j < model.d; ++j) mean[j] += e[j];
    }
    double norm = 0.0;
    for (double v : mean) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw DegenerateSeedSetError("class prototype has zero norm");
    for (double& v : mean) v /= norm;
    return mean;
}

seqcore::TokenSequence as_generated(std::span<const int> tokens) {
    seqcore::TokenSequence seq;
    for (int t : tokens) seq.push_back(t, seqcore::TokenOrigin::generated);
    return seq;
}

} // namespace

// ---- world construction -----------------------------------------------------

ToyWorld make_toy_world(std::uint64_t seed, double bias_strength, int vocab_size, int d, int h) {
    if (!(bias_strength >= 0.0 && bias_strength <= 1.0))
        throw ConfigError("bias_strength must lie in [0, 1]");
    if (vocab_size != kV || d != kD || h != kH)
        throw BudgetError("toy world supports exactly |V|=14, d=8, h=8 (one axis per class)");

    std::mt19937_64 rng(seed);

    ToyWorld world;
    world.bias_strength = bias_strength;
    world.vocab = build_vocab();

    // Generator: per-token embedding magnitudes and per-target logit offsets
    // are jittered per seed. Offsets are shared across source states, so with
    // bias_strength = 0 every subject-side state has the bitwise-identical
    // next-token distribution (likewise property-side), which makes generated
    // tokens exactly independent of the prompt group.
    toylm::ToyLM gen;
    gen.vocab_size = kV;
    gen.d = kD;
    gen.h = kH;
    gen.context_window = 1;
    gen.embed.assign(static_cast<std::size_t>(kV) * kD, 0.0);
    for (int t = 0; t < kV; ++t) {
        const double base = (t % 2 == 0) ? 0.8 : 1.2;
        set_embedding(gen.embed, t, base + jitter(rng, kMagnitudeJitter));
    }
    gen.w1 = identity_gain(kSaturationGain);
    gen.b1.assign(kH, 0.0);
    gen.w2 = clean_w2(bias_strength);
    gen.b2 = clean_b2();
    for (int t = kHe; t <= kStays; ++t) gen.b2[t] += jitter(rng, kLogitJitter);
    gen.validate();
    world.generator = std::move(gen);

    // Evaluator: jitter-free tables, uniformly softened. Distinct from the
    // generator but fluent on everything the generator can produce.
    toylm::ToyLM ev;
    ev.vocab_size = kV;
    ev.d = kD;
    ev.h = kH;
    ev.context_window = 1;
    ev.embed.assign(static_cast<std::size_t>(kV) * kD, 0.0);
    for (int t = 0; t < kV; ++t) set_embedding(ev.embed, t, 1.0);
    ev.w1 = identity_gain(kSaturationGain);
    ev.b1.assign(kH, 0.0);
    ev.w2 = clean_w2(bias_strength);
    for (double& v : ev.w2) v *= kEvalSmoothing;
    ev.b2 = clean_b2();
    for (double& v : ev.b2) v *= kEvalSmoothing;
    ev.validate();
    world.evaluator = std::move(ev);

    world.prompts = {
        {0, "male", {kBos, kHe}},          {0, "female", {kBos, kShe}},
        {1, "male", {kBos, kMan}},         {1, "female", {kBos, kWoman}},
        {2, "male", {kBos, kThe, kMan}},   {2, "female", {kBos, kThe, kWoman}},
    };
    return world;
}

// ---- intervention wiring ----------------------------------------------------

controller::AttrBundle make_attr_bundle(const seqcore::Vocabulary& vocab,
                                        const toylm::ToyLM& model,
                                        const std::string& prompt_group) {
    attr::GroupProjector projector;
    projector.groups = vocab.group_names();
    for (const std::string& group : projector.groups) {
        std::vector<std::vector<double>> embeddings;
        for (int tok : vocab.seed_sets.at(group)) {
            auto e = model.embedding(tok);
            embeddings.emplace_back(e.begin(), e.end());
        }
        projector.pcs.push_back(attr::principal_component(embeddings));
    }
    projector.prior.assign(projector.groups.size(),
                           1.0 / static_cast<double>(projector.groups.size()));
    projector.validate();

    std::vector<int> negative_tokens, positive_tokens;
    auto sentiment = vocab.lexicons.find("sentiment");
    if (sentiment == vocab.lexicons.end())
        throw ConfigError("vocabulary lacks a sentiment lexicon for the property classifier");
    for (const auto& [tok, score] : sentiment->second) {
        if (score < 0.0) negative_tokens.push_back(tok);
        if (score > 0.0) positive_tokens.push_back(tok);
    }

    attr::AttributeClassifier classifier;
    classifier.classes = {"negative", "positive"};
    classifier.protos = {normalized_mean_embedding(model, negative_tokens),
                         normalized_mean_embedding(model, positive_tokens)};
    classifier.target_class = 1;  // steer toward positive property
    classifier.validate();

    controller::AttrBundle bundle;
    bundle.projector = std::move(projector);
    bundle.classifier = std::move(classifier);
    bundle.seed_union = vocab.seed_union();
    if (!prompt_group.empty()) {
        auto it = vocab.seed_sets.find(prompt_group);
        if (it == vocab.seed_sets.end())
            throw ConfigError("unknown prompt group: " + prompt_group);
        bundle.prompt_group_seeds = it->second;
    }
    return bundle;
}

controller::AttrBundle make_attr_bundle(const ToyWorld& world, const std::string& prompt_group) {
    return make_attr_bundle(world.vocab, world.generator, prompt_group);
}

// ---- outcome labelers -------------------------------------------------------

int property_label_index(const seqcore::Vocabulary& vocab, std::span<const int> tokens) {
    if (tokens.empty()) return 1;
    const seqcore::TokenSequence seq = as_generated(tokens);
    const double score = eval::score_sentiment(seq, vocab, eval::LabelMode::generation_only);
    if (score > 0.5) return 2;
    if (score < 0.5) return 0;
    return 1;
}

int gender_label_index(const seqcore::Vocabulary& vocab, std::span<const int> tokens) {
    if (tokens.empty()) return 2;
    const seqcore::TokenSequence seq = as_generated(tokens);
    const std::string label = eval::label_gender(seq, vocab, eval::LabelMode::generation_only);
    if (label == "male") return 0;
    if (label == "female") return 1;
    return 2;
}

} // namespace lidao::world
