#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>

#include "excord/autograd.hpp"
#include "excord/errors.hpp"

using namespace excord;
using namespace excord::autograd;

namespace {

std::mt19937_64 rng(2024);

std::vector<double> random_values(std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> out(n);
    for (double& v : out) v = normal(rng);
    return out;
}

Var random_param(std::size_t rows, std::size_t cols) { return Var::parameter(rows, cols, random_values(rows * cols)); }

// Weighted sum of every entry against fixed random weights, so each output
// entry contributes its own gradient signal.
Var reduce(const Var& out) {
    std::mt19937_64 fixed(out.size());
    std::normal_distribution<double> normal;
    std::vector<double> w(out.size());
    for (double& v : w) v = normal(fixed);
    const Var weights = Var::constant(out.rows(), out.cols(), w);
    const Var product = mul(out, weights);
    std::vector<Var> picks;
    for (std::size_t i = 0; i < product.size(); ++i) picks.push_back(pick(product, i));
    return sum(picks);
}

// Central differences against the analytic gradient of every parameter entry.
double max_relative_error(std::vector<Var> params, const std::function<Var(const std::vector<Var>&)>& f) {
    for (Var& p : params) p.zero_grad();
    const Var root = f(params);
    backward(root);
    std::vector<std::vector<double>> analytic;
    for (const Var& p : params) analytic.push_back(p.grad());
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            const double saved = params[k].value()[i];
            params[k].mutable_value()[i] = saved + h;
            const double up = f(params).item();
            params[k].mutable_value()[i] = saved - h;
            const double down = f(params).item();
            params[k].mutable_value()[i] = saved;
            const double numeric = (up - down) / (2 * h);
            const double err = std::abs(numeric - analytic[k][i]) / std::max(1.0, std::abs(numeric) + std::abs(analytic[k][i]));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("elementwise and matrix ops have correct gradients") {
    Var a = random_param(3, 4), b = random_param(3, 4), w = random_param(4, 2), row = random_param(1, 4);
    CHECK(max_relative_error({a, w}, [](const auto& p) { return reduce(matmul(p[0], p[1])); }) < 1e-6);
    CHECK(max_relative_error({a, b}, [](const auto& p) { return reduce(add(p[0], p[1])); }) < 1e-6);
    CHECK(max_relative_error({a, b}, [](const auto& p) { return reduce(mul(p[0], p[1])); }) < 1e-6);
    CHECK(max_relative_error({a, row}, [](const auto& p) { return reduce(add_row(p[0], p[1])); }) < 1e-6);
    CHECK(max_relative_error({a, row}, [](const auto& p) { return reduce(mul_row(p[0], p[1])); }) < 1e-6);
    CHECK(max_relative_error({a}, [](const auto& p) { return reduce(tanh(p[0])); }) < 1e-6);
    CHECK(max_relative_error({a}, [](const auto& p) { return reduce(scale(p[0], -2.5)); }) < 1e-6);
}

TEST_CASE("row ops have correct gradients") {
    Var table = random_param(6, 3), a = random_param(7, 3), row = random_param(1, 3);
    const std::vector<int> ids = {0, 5, 5, 2, 1};
    CHECK(max_relative_error({table}, [&](const auto& p) { return reduce(gather_rows(p[0], ids)); }) < 1e-6);
    const std::vector<double> weights = {0.5, -1.0, 2.0};
    CHECK(max_relative_error({row}, [&](const auto& p) { return reduce(outer_const(weights, p[0])); }) < 1e-6);
    for (int offset : {-2, -1, 1, 3}) {
        CHECK(max_relative_error({a}, [&](const auto& p) { return reduce(shift_rows(p[0], offset)); }) < 1e-6);
    }
    CHECK(max_relative_error({a}, [](const auto& p) { return reduce(window_mean_rows(p[0], 2)); }) < 1e-6);
    const std::vector<bool> mask = {true, false, true, true, false, false, true};
    CHECK(max_relative_error({a}, [&](const auto& p) { return reduce(masked_mean_rows(p[0], mask)); }) < 1e-6);
    CHECK(max_relative_error({a, a}, [](const auto& p) {
              const std::vector<Var> parts = {p[0], tanh(p[1])};
              return reduce(concat_cols(parts));
          }) < 1e-6);
}

TEST_CASE("log-softmax and KL have correct gradients") {
    Var logits = random_param(8, 1), other = random_param(8, 1);
    const std::vector<bool> mask = {true, true, false, true, true, true, false, true};
    CHECK(max_relative_error({logits}, [&](const auto& p) { return reduce(masked_log_softmax(p[0], mask)); }) < 1e-6);
    CHECK(max_relative_error({logits, other}, [&](const auto& p) {
              return kl_divergence(masked_log_softmax(p[0], mask), masked_log_softmax(p[1], mask), mask);
          }) < 1e-6);
}

TEST_CASE("masked log-softmax normalizes over the mask only") {
    const Var logits = Var::constant(4, 1, {1.0, 2.0, 50.0, 3.0});
    const std::vector<bool> mask = {true, true, false, true};
    const Var lp = masked_log_softmax(logits, mask);
    double total = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (mask[i]) total += std::exp(lp.value()[i]);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lp.value()[2] == 0.0);
}

TEST_CASE("detach blocks gradient flow") {
    Var a = Var::parameter(1, 1, {0.3});
    // d/da [tanh(a) + detach(3a)] = 1 - tanh(a)^2 only.
    backward(pick(add(tanh(a), detach(scale(a, 3.0))), 0));
    CHECK(a.grad()[0] == doctest::Approx(1.0 - std::pow(std::tanh(0.3), 2)).epsilon(1e-12));
    Var c = Var::parameter(1, 1, {0.7});
    backward(pick(detach(tanh(c)), 0));
    CHECK((c.grad().empty() || c.grad()[0] == 0.0));
}

TEST_CASE("gradients accumulate across shared uses") {
    Var a = Var::parameter(1, 1, {3.0});
    const Var y = mul(a, a);  // d/da a^2 = 2a
    backward(pick(y, 0));
    CHECK(a.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("shape mismatches are contract errors") {
    const Var a = random_param(2, 3), b = random_param(2, 2);
    CHECK_THROWS_AS(matmul(a, b), ContractError);
    CHECK_THROWS_AS(add(a, b), ContractError);
    CHECK_THROWS_AS(backward(a), ContractError);
}
