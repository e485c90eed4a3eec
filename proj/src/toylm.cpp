#include "lidao/toylm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace lidao::toylm {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- ToyLM ------------------------------------------------------------------

void ToyLM::validate() const {
    if (vocab_size < 2) throw ConfigError("model vocab_size must be >= 2");
    if (d < 1 || h < 1) throw ConfigError("model dims must satisfy d, h >= 1");
    if (context_window < 1) throw ConfigError("context_window must be >= 1");
    auto expect = [](const std::vector<double>& v, std::size_t n, const char* name) {
        if (v.size() != n) throw ConfigError(std::string("model array has wrong size: ") + name);
        for (double x : v)
            if (!std::isfinite(x)) throw ConfigError(std::string("non-finite model entry in ") + name);
    };
    const auto V = static_cast<std::size_t>(vocab_size);
    expect(embed, V * d, "embed");
    expect(w1, static_cast<std::size_t>(h) * d, "w1");
    expect(b1, static_cast<std::size_t>(h), "b1");
    expect(w2, V * h, "w2");
    expect(b2, V, "b2");
}

namespace {

json matrix_json(const std::vector<double>& flat, int rows, int cols) {
    json out = json::array();
    for (int r = 0; r < rows; ++r) {
        json row = json::array();
        for (int c = 0; c < cols; ++c) row.push_back(flat[static_cast<std::size_t>(r) * cols + c]);
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<double> matrix_from_json(const json& j, int rows, int cols, const char* name) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(rows) * cols);
    if (static_cast<int>(j.size()) != rows)
        throw ConfigError(std::string("model matrix has wrong row count: ") + name);
    for (const auto& row : j) {
        if (static_cast<int>(row.size()) != cols)
            throw ConfigError(std::string("model matrix has wrong column count: ") + name);
        for (const auto& x : row) flat.push_back(x.get<double>());
    }
    return flat;
}

} // namespace

std::string ToyLM::to_json_string() const {
    ordered_json j;
    j["format_version"] = 1;
    j["vocab_size"] = vocab_size;
    j["d"] = d;
    j["h"] = h;
    j["context_window"] = context_window;
    j["embed"] = matrix_json(embed, vocab_size, d);
    j["w1"] = matrix_json(w1, h, d);
    j["b1"] = b1;
    j["w2"] = matrix_json(w2, vocab_size, h);
    j["b2"] = b2;
    return j.dump(2) + "\n";
}

ToyLM ToyLM::from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model JSON parse failure: ") + e.what());
    }
    ToyLM m;
    try {
        if (j.at("format_version").get<int>() != 1)
            throw ConfigError("unsupported model format_version");
        m.vocab_size = j.at("vocab_size").get<int>();
        m.d = j.at("d").get<int>();
        m.h = j.at("h").get<int>();
        m.context_window = j.at("context_window").get<int>();
        m.embed = matrix_from_json(j.at("embed"), m.vocab_size, m.d, "embed");
        m.w1 = matrix_from_json(j.at("w1"), m.h, m.d, "w1");
        m.b1 = j.at("b1").get<std::vector<double>>();
        m.w2 = matrix_from_json(j.at("w2"), m.vocab_size, m.h, "w2");
        m.b2 = j.at("b2").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model JSON schema failure: ") + e.what());
    }
    m.validate();
    return m;
}

void ToyLM::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write model file: " + path.string());
    out << to_json_string();
}

ToyLM ToyLM::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read model file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str());
}

// ---- forward ----------------------------------------------------------------

ForwardResult forward(const ToyLM& model, const TunableDelta& delta, std::span<const int> context) {
    if (context.empty()) throw ConfigError("forward requires a nonempty context");
    ForwardResult r;
    r.mean_embed.assign(model.d, 0.0);
    const std::size_t window = std::min<std::size_t>(model.context_window, context.size());
    for (std::size_t i = context.size() - window; i < context.size(); ++i) {
        const auto e = model.embedding(context[i]);
        for (int k = 0; k < model.d; ++k) r.mean_embed[k] += e[k];
    }
    for (double& x : r.mean_embed) x /= static_cast<double>(window);

    r.hidden.assign(model.h, 0.0);
    for (int i = 0; i < model.h; ++i) {
        double z = model.b1[i] + delta.db1[i];
        const double* row = model.w1.data() + static_cast<std::size_t>(i) * model.d;
        for (int k = 0; k < model.d; ++k) z += row[k] * r.mean_embed[k];
        r.hidden[i] = std::tanh(z);
    }

    r.logits.assign(model.vocab_size, 0.0);
    for (int v = 0; v < model.vocab_size; ++v) {
        double z = model.b2[v] + delta.db2[v];
        const double* row = model.w2.data() + static_cast<std::size_t>(v) * model.h;
        for (int i = 0; i < model.h; ++i) z += row[i] * r.hidden[i];
        r.logits[v] = z;
    }
    r.dist = seqcore::softmax(r.logits);
    return r;
}

// ---- losses -----------------------------------------------------------------

double LinearDistributionLoss::value(const seqcore::NextTokenDistribution& dist) const {
    double s = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) s += dist.probs[i] * phi[i];
    return s;
}

std::vector<double> LinearDistributionLoss::dist_grad(const seqcore::NextTokenDistribution&) const {
    return phi;
}

double ProductDistributionLoss::value(const seqcore::NextTokenDistribution& dist) const {
    double f = 0.0, s = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        f += dist.probs[i] * phi_first[i];
        s += dist.probs[i] * phi_second[i];
    }
    return f * s;
}

std::vector<double> ProductDistributionLoss::dist_grad(const seqcore::NextTokenDistribution& dist) const {
    double f = 0.0, s = 0.0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        f += dist.probs[i] * phi_first[i];
        s += dist.probs[i] * phi_second[i];
    }
    std::vector<double> g(dist.probs.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = s * phi_first[i] + f * phi_second[i];
    return g;
}

double NegLogTokenLoss::value(const seqcore::NextTokenDistribution& dist) const {
    return -std::log(std::max(dist.probs[token], 1e-12));
}

std::vector<double> NegLogTokenLoss::dist_grad(const seqcore::NextTokenDistribution& dist) const {
    std::vector<double> g(dist.probs.size(), 0.0);
    g[token] = -1.0 / std::max(dist.probs[token], 1e-12);
    return g;
}

// ---- grad_tunable -----------------------------------------------------------

TunableDelta grad_tunable(const ToyLM& model, const TunableDelta& delta,
                          std::span<const int> context, const DistributionLoss& loss) {
    const ForwardResult fr = forward(model, delta, context);
    if (!std::isfinite(loss.value(fr.dist)))
        throw NumericFailureError("non-finite loss in grad_tunable");

    const std::vector<double> gp = loss.dist_grad(fr.dist);  // dL/dp
    // Backprop through softmax: dL/dz_i = p_i * (gp_i - sum_j p_j gp_j).
    double inner = 0.0;
    for (int i = 0; i < model.vocab_size; ++i) inner += fr.dist.probs[i] * gp[i];
    TunableDelta grad = TunableDelta::zeros(model);
    for (int i = 0; i < model.vocab_size; ++i)
        grad.db2[i] = fr.dist.probs[i] * (gp[i] - inner);

    // dL/dh = w2^T dL/dz; backprop through tanh: dL/db1 = (1 - h^2) .* dL/dh.
    for (int i = 0; i < model.h; ++i) {
        double s = 0.0;
        for (int v = 0; v < model.vocab_size; ++v)
            s += model.w2[static_cast<std::size_t>(v) * model.h + i] * grad.db2[v];
        grad.db1[i] = (1.0 - fr.hidden[i] * fr.hidden[i]) * s;
    }

    for (double g : grad.db1)
        if (!std::isfinite(g)) throw NumericFailureError("non-finite gradient in db1");
    for (double g : grad.db2)
        if (!std::isfinite(g)) throw NumericFailureError("non-finite gradient in db2");
    return grad;
}

// ---- log_likelihood ---------------------------------------------------------

double log_likelihood(const ToyLM& model, const seqcore::TokenSequence& seq) {
    if (seq.size() < 2) throw ConfigError("log_likelihood requires a sequence of length >= 2");
    if (seq.n_generated() == 0) throw ConfigError("log_likelihood requires >= 1 generated token");
    const TunableDelta zero = TunableDelta::zeros(model);
    double ll = 0.0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
        if (seq.origins[t] != seqcore::TokenOrigin::generated) continue;
        if (t == 0) throw ConfigError("generated token at position 0 has no context");
        const auto fr = forward(model, zero, std::span<const int>(seq.ids.data(), t));
        const double p = fr.dist.probs[seq.ids[t]];
        if (p <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += std::log(p);
    }
    return ll;
}

} // namespace lidao::toylm
