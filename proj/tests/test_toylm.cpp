#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "lidao/errors.hpp"
#include "lidao/toylm.hpp"

using namespace lidao;
using seqcore::TokenOrigin;

namespace {

// V=2, d=1, h=1 model small enough to evaluate by hand.
toylm::ToyLM hand_model() {
    toylm::ToyLM m;
    m.vocab_size = 2;
    m.d = 1;
    m.h = 1;
    m.context_window = 1;
    m.embed = {2.0, 0.0};  // token 0 -> [2], token 1 -> [0]
    m.w1 = {1.0};
    m.b1 = {0.0};
    m.w2 = {1.0, 0.0};  // logit_0 = hidden, logit_1 = 0
    m.b2 = {0.0, 0.0};
    m.validate();
    return m;
}

toylm::ToyLM random_model(std::mt19937_64& rng, int vocab, int d, int h, int window) {
    auto u = [&rng] { return std::ldexp(static_cast<double>(rng() >> 11), -53) * 2.0 - 1.0; };
    toylm::ToyLM m;
    m.vocab_size = vocab;
    m.d = d;
    m.h = h;
    m.context_window = window;
    auto fill = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (double& x : v) x = u();
    };
    fill(m.embed, static_cast<std::size_t>(vocab) * d);
    fill(m.w1, static_cast<std::size_t>(h) * d);
    fill(m.b1, static_cast<std::size_t>(h));
    fill(m.w2, static_cast<std::size_t>(vocab) * h);
    fill(m.b2, static_cast<std::size_t>(vocab));
    m.validate();
    return m;
}

} // namespace

TEST_CASE("model validation rejects inconsistent shapes") {
    auto m = hand_model();
    CHECK_NOTHROW(m.validate());
    m.embed.push_back(1.0);
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = hand_model();
    m.b2 = {0.0};
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = hand_model();
    m.w1[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = hand_model();
    m.context_window = 0;
    CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("forward matches the hand computation") {
    const auto m = hand_model();
    const auto zero = toylm::TunableDelta::zeros(m);

    const auto r = toylm::forward(m, zero, std::vector<int>{0});
    CHECK(r.mean_embed[0] == doctest::Approx(2.0));
    CHECK(r.hidden[0] == doctest::Approx(std::tanh(2.0)));
    CHECK(r.logits[0] == doctest::Approx(std::tanh(2.0)));
    CHECK(r.logits[1] == doctest::Approx(0.0));
    const double z = std::exp(std::tanh(2.0)) + 1.0;
    CHECK(r.dist.probs[0] == doctest::Approx(std::exp(std::tanh(2.0)) / z));
    CHECK(r.dist.probs[1] == doctest::Approx(1.0 / z));

    CHECK_THROWS_AS(toylm::forward(m, zero, std::vector<int>{}), ConfigError);
}

TEST_CASE("forward averages only the trailing context window") {
    auto m = hand_model();
    m.context_window = 1;
    const auto zero = toylm::TunableDelta::zeros(m);
    // Window 1: only the last token (id 1, embedding 0) matters.
    const auto r1 = toylm::forward(m, zero, std::vector<int>{0, 1});
    CHECK(r1.mean_embed[0] == doctest::Approx(0.0));
    CHECK(r1.dist.probs[0] == doctest::Approx(0.5));

    m.context_window = 2;
    const auto r2 = toylm::forward(m, zero, std::vector<int>{0, 1});
    CHECK(r2.mean_embed[0] == doctest::Approx(1.0));  // mean of [2] and [0]

    // Window larger than the context uses all of it.
    m.context_window = 10;
    const auto r3 = toylm::forward(m, zero, std::vector<int>{0, 1});
    CHECK(r3.mean_embed[0] == doctest::Approx(1.0));
}

TEST_CASE("tunable deltas shift the two bias vectors") {
    const auto m = hand_model();
    auto delta = toylm::TunableDelta::zeros(m);
    delta.db2 = {0.0, std::log(2.0)};
    const auto r = toylm::forward(m, delta, std::vector<int>{1});
    // Base logits {0,0} -> {0, log 2} -> probs {1/3, 2/3}.
    CHECK(r.dist.probs[0] == doctest::Approx(1.0 / 3.0));
    CHECK(r.dist.probs[1] == doctest::Approx(2.0 / 3.0));

    auto delta1 = toylm::TunableDelta::zeros(m);
    delta1.db1 = {5.0};
    const auto rb = toylm::forward(m, delta1, std::vector<int>{1});
    CHECK(rb.hidden[0] == doctest::Approx(std::tanh(5.0)));
}

TEST_CASE("model JSON round trip is lossless") {
    std::mt19937_64 rng(11);
    const auto m = random_model(rng, 5, 3, 4, 2);
    const auto n = toylm::ToyLM::from_json_string(m.to_json_string());
    CHECK(n.vocab_size == m.vocab_size);
    CHECK(n.d == m.d);
    CHECK(n.h == m.h);
    CHECK(n.context_window == m.context_window);
    CHECK(n.embed == m.embed);
    CHECK(n.w1 == m.w1);
    CHECK(n.b1 == m.b1);
    CHECK(n.w2 == m.w2);
    CHECK(n.b2 == m.b2);

    CHECK_THROWS_AS(toylm::ToyLM::from_json_string("[]"), ConfigError);
    CHECK_THROWS_AS(toylm::ToyLM::from_json_string("{\"format_version\": 99}"), ConfigError);
}

TEST_CASE("distribution losses and their gradients") {
    const seqcore::NextTokenDistribution d{{0.25, 0.75}};

    const toylm::LinearDistributionLoss lin({2.0, 4.0});
    CHECK(lin.value(d) == doctest::Approx(0.25 * 2 + 0.75 * 4));
    CHECK(lin.dist_grad(d) == std::vector<double>{2.0, 4.0});

    const toylm::ProductDistributionLoss prod({2.0, 4.0}, {1.0, 0.0});
    const double f = 3.5, s = 0.25;
    CHECK(prod.value(d) == doctest::Approx(f * s));
    const auto pg = prod.dist_grad(d);
    CHECK(pg[0] == doctest::Approx(s * 2.0 + f * 1.0));
    CHECK(pg[1] == doctest::Approx(s * 4.0 + f * 0.0));

    const toylm::NegLogTokenLoss nll(1);
    CHECK(nll.value(d) == doctest::Approx(-std::log(0.75)));
    const auto ng = nll.dist_grad(d);
    CHECK(ng[0] == 0.0);
    CHECK(ng[1] == doctest::Approx(-1.0 / 0.75));
}

TEST_CASE("analytic gradient agrees with central differences") {
    std::mt19937_64 rng(123);
    const double step = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = random_model(rng, 4, 3, 3, 2);
        const std::vector<int> context{static_cast<int>(rng() % 4), static_cast<int>(rng() % 4)};
        const toylm::NegLogTokenLoss loss(static_cast<int>(rng() % 4));

        const auto analytic =
            toylm::grad_tunable(m, toylm::TunableDelta::zeros(m), context, loss);
        auto delta = toylm::TunableDelta::zeros(m);
        auto probe = [&](std::vector<double>& slot, const std::vector<double>& ana) {
            for (std::size_t i = 0; i < slot.size(); ++i) {
                slot[i] = step;
                const double up = loss.value(toylm::forward(m, delta, context).dist);
                slot[i] = -step;
                const double down = loss.value(toylm::forward(m, delta, context).dist);
                slot[i] = 0.0;
                CHECK(ana[i] == doctest::Approx((up - down) / (2 * step)).epsilon(1e-4));
            }
        };
        probe(delta.db1, analytic.db1);
        probe(delta.db2, analytic.db2);
    }
}

TEST_CASE("log likelihood sums generated positions only") {
    auto m = hand_model();
    m.embed = {0.0, 0.0};  // every context gives the uniform {1/2, 1/2}

    seqcore::TokenSequence seq;
    seq.push_back(0, TokenOrigin::prompt);
    seq.push_back(1, TokenOrigin::generated);
    seq.push_back(0, TokenOrigin::generated);
    CHECK(toylm::log_likelihood(m, seq) == doctest::Approx(2.0 * std::log(0.5)));

    seqcore::TokenSequence with_prompt;
    with_prompt.push_back(0, TokenOrigin::prompt);
    with_prompt.push_back(1, TokenOrigin::prompt);  // prompt tokens contribute nothing
    with_prompt.push_back(0, TokenOrigin::generated);
    CHECK(toylm::log_likelihood(m, with_prompt) == doctest::Approx(std::log(0.5)));

    seqcore::TokenSequence too_short;
    too_short.push_back(0, TokenOrigin::prompt);
    CHECK_THROWS_AS(toylm::log_likelihood(m, too_short), ConfigError);

    seqcore::TokenSequence no_generated;
    no_generated.push_back(0, TokenOrigin::prompt);
    no_generated.push_back(1, TokenOrigin::prompt);
    CHECK_THROWS_AS(toylm::log_likelihood(m, no_generated), ConfigError);

    seqcore::TokenSequence leading_generated;
    leading_generated.push_back(0, TokenOrigin::generated);
    leading_generated.push_back(1, TokenOrigin::generated);
    CHECK_THROWS_AS(toylm::log_likelihood(m, leading_generated), ConfigError);
}
