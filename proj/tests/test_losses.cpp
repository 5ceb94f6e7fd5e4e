#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "excord/errors.hpp"
#include "excord/losses.hpp"

using namespace excord;

namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> p(n);
    double total = 0.0;
    for (double& v : p) total += v = e(rng) + 1e-3;
    for (double& v : p) v /= total;
    return p;
}

double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    return kl;
}

std::vector<double> sharpen_oracle(const std::vector<double>& p, double t) {
    std::vector<double> out(p.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += out[i] = std::pow(p[i], 1.0 / t);
    for (double& v : out) v /= total;
    return out;
}

Document numbered_document(std::size_t n) {
    std::string text;
    for (std::size_t i = 0; i < n; ++i) text += "w" + std::to_string(i) + " ";
    return Document::make("doc", text);
}

}  // namespace

TEST_CASE("span NLL") {
    SpanDistribution one_hot{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    CHECK(span_nll(one_hot, 1, 2) == 0.0);
    const std::size_t n = 7;
    SpanDistribution uniform{std::vector<double>(n, 1.0 / n), std::vector<double>(n, 1.0 / n)};
    CHECK(span_nll(uniform, 0, 3) == doctest::Approx(2 * std::log(7.0)).epsilon(1e-12));
    SpanDistribution d{{0.25, 0.75}, {0.5, 0.5}};
    CHECK(span_nll(d, 0, 1) == doctest::Approx(2.0794).epsilon(1e-4));
    CHECK(span_nll(d, 0, 1) == doctest::Approx(-std::log(0.25) - std::log(0.5)).epsilon(1e-12));
    // Zero probability is floored rather than infinite.
    CHECK(std::isfinite(span_nll(one_hot, 0, 0)));
    CHECK(span_nll(one_hot, 0, 2) == doctest::Approx(-std::log(kLogEpsilon)));
    CHECK_THROWS_AS(span_nll(d, 0, 1, std::vector<bool>{false, true}), ContractError);
}

TEST_CASE("consistency KL worked example and identities") {
    // One head only: the end heads are identical and contribute zero.
    SpanDistribution orig{{0.5, 0.5}, {0.3, 0.7}};
    SpanDistribution self{{0.9, 0.1}, {0.3, 0.7}};
    CHECK(consistency_kl(orig, self, 1.0) == doctest::Approx(0.5108).epsilon(1e-4));
    CHECK(consistency_kl(orig, self, 1.0) ==
          doctest::Approx(0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1)).epsilon(1e-12));
    CHECK(consistency_kl(orig, orig, 1.0) == 0.0);
}

TEST_CASE("consistency KL equals an independent summation") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        const double t = trial % 2 == 0 ? 1.0 : 0.9;
        SpanDistribution a{random_simplex(rng, n), random_simplex(rng, n)};
        SpanDistribution b{random_simplex(rng, n), random_simplex(rng, n)};
        const double expected = kl_oracle(a.start_probs, sharpen_oracle(b.start_probs, t)) +
                                kl_oracle(a.end_probs, sharpen_oracle(b.end_probs, t));
        const double got = consistency_kl(a, b, t);
        CHECK(std::abs(got - expected) < 1e-9);
        CHECK(got >= 0.0);
    }
}

TEST_CASE("consistency KL checks geometry") {
    const EncodingLimits limits{40, 8, 8};
    const auto a = encode_input(numbered_document(10), "q", {}, {}, limits, Vocabulary{})[0];
    const auto b = encode_input(numbered_document(12), "q", {}, {}, limits, Vocabulary{})[0];
    const SpanDistribution d{std::vector<double>(a.size(), 1.0 / a.size()), std::vector<double>(a.size(), 1.0 / a.size())};
    CHECK_NOTHROW(consistency_kl(d, a, d, a, 0.9));
    CHECK_THROWS_AS(consistency_kl(d, a, d, b, 0.9), ContractError);
}

TEST_CASE("total loss combination") {
    const LossWeights defaults;
    CHECK(defaults.lambda1 == 0.5);
    CHECK(defaults.lambda2 == 0.7);
    CHECK(defaults.target_temperature == 0.9);
    CHECK(total_loss(1.0, 2.0, 1.0, defaults).total == doctest::Approx(2.7).epsilon(1e-12));
    CHECK(total_loss(1.3, 2.0, 1.0, {0.0, 0.0, 1.0}).total == 1.3);
    CHECK(total_loss(1.3, 2.0, 1.0, {1.0, 0.0, 1.0}).total == 3.3);
    try {
        total_loss(1.0, std::numeric_limits<double>::quiet_NaN(), 0.0, defaults);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("l_self") != std::string::npos);
    }
    CHECK_THROWS_AS(total_loss(std::numeric_limits<double>::infinity(), 0, 0, defaults), NumericError);
}

TEST_CASE("total loss identity holds bit-exactly on random inputs") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 20.0), w(0.0, 2.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const LossWeights weights{w(rng), w(rng), 0.9};
        const double a = u(rng), b = u(rng), c = u(rng);
        const LossBreakdown out = total_loss(a, b, c, weights);
        CHECK(out.total == a + weights.lambda1 * b + weights.lambda2 * c);
        CHECK(out.l_orig == a);
        CHECK(out.l_self == b);
        CHECK(out.l_cons == c);
    }
}

TEST_CASE("loss weights validation") {
    CHECK_NOTHROW(LossWeights{}.validate());
    CHECK_THROWS_AS((LossWeights{-0.1, 0.7, 0.9}.validate()), ArgumentError);
    CHECK_THROWS_AS((LossWeights{0.5, 0.7, 0.0}.validate()), ArgumentError);
    CHECK_THROWS_AS((LossWeights{0.5, 0.7, 1.5}.validate()), ArgumentError);
}

TEST_CASE("graph losses agree with the plain computations") {
    TinyBackbone backbone(TinyBackboneConfig{});
    const Document doc = numbered_document(20);
    const EncodingLimits limits{40, 8, 8};
    const auto orig = encode_input(doc, "where is it", {{{"w1", "w2"}}}, {}, limits, backbone.vocabulary())[0];
    const auto self = encode_input(doc, "where is w5", {}, {}, limits, backbone.vocabulary())[0];

    const SpanDistribution p_orig = forward(backbone, orig);
    const SpanDistribution p_self = forward(backbone, self);
    const SpanLogProbs lp = span_log_probs(backbone.forward_graph(orig, backbone.parameters()), orig);
    CHECK(span_nll(lp, 3, 5).item() == doctest::Approx(span_nll(p_orig, 3, 5)).epsilon(1e-10));

    const SpanDistribution target = sharpen(p_self, 0.9);
    CHECK(consistency_kl(lp, target).item() == doctest::Approx(consistency_kl(p_orig, p_self, 0.9)).epsilon(1e-10));
}
