#include <doctest.h>

#include <cmath>
#include <limits>

#include "edm/losses.hpp"
#include "edm/nn.hpp"
#include "../support/oracles.hpp"

using namespace edm;

TEST_CASE("init_model: deterministic, zero biases, weight variance near 1/fan_in") {
  const Architecture arch{{100, 200, 60, 4}};
  const auto a = init_model(arch, NetRole::kNetD, 17);
  CHECK(a == init_model(arch, NetRole::kNetD, 17));
  CHECK_FALSE(a == init_model(arch, NetRole::kNetD, 18));
  CHECK(a.params.size() == 100 * 200 + 200 + 200 * 60 + 60 + 60 * 4 + 4);

  for (const auto& layer : a.params.layers)
    for (double b : layer.bias) CHECK(b == 0.0);

  const auto& w = a.params.layers[0].weight;  // 2*10^4 entries, fan_in 100
  double sum = 0.0, sq = 0.0;
  for (double x : w.values()) {
    sum += x;
    sq += x * x;
  }
  const double n = static_cast<double>(w.values().size());
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(var - 0.01) < 0.2 * 0.01);
}

TEST_CASE("init_model: zero-width layers are rejected") {
  CHECK_THROWS(init_model(Architecture{{4, 0, 3}}, NetRole::kNetD, 1));
  CHECK_THROWS(init_model(Architecture{{4}}, NetRole::kNetD, 1));
}

TEST_CASE("forward: single linear layer selects a weight column") {
  ModelParams m = init_model(Architecture{{3, 2}}, NetRole::kNetD, 1);
  m.params.layers[0].weight = stack_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
  const Matrix logits = forward_logits(m, stack_rows({{0.0, 1.0, 0.0}}));
  CHECK(logits(0, 0) == 2.0);
  CHECK(logits(0, 1) == 5.0);
}

TEST_CASE("forward: hidden rectifier and penultimate features") {
  ModelParams m = init_model(Architecture{{2, 2, 1}}, NetRole::kNetD, 1);
  m.params.layers[0].weight = stack_rows({{1.0, 0.0}, {0.0, 1.0}});
  m.params.layers[0].bias = {0.0, 0.0};
  m.params.layers[1].weight = stack_rows({{1.0, 1.0}});
  m.params.layers[1].bias = {0.5};
  const auto cache = forward(m, stack_rows({{2.0, -3.0}}));
  CHECK(cache.logits()(0, 0) == 2.5);
  CHECK(cache.penultimate()(0, 0) == 2.0);
  CHECK(cache.penultimate()(0, 1) == 0.0);
}

TEST_CASE("forward: width mismatch is a shape error") {
  const auto m = init_model(Architecture{{3, 2}}, NetRole::kNetD, 1);
  CHECK_THROWS_AS(forward(m, Matrix(1, 4)), ShapeError);
}

TEST_CASE("softmax examples") {
  const auto p = softmax(std::vector<double>{std::log(3.0), 0.0});
  CHECK(std::abs(p[0] - 0.75) < 1e-12);
  CHECK(std::abs(p[1] - 0.25) < 1e-12);
  const auto big = softmax(std::vector<double>{1000.0, 0.0});
  CHECK(big[0] == 1.0);
  CHECK(big[1] >= 0.0);
  CHECK(std::isfinite(big[1]));
}

TEST_CASE("backward: a loss that ignores the logits yields zero gradients") {
  const auto m = init_model(Architecture{{3, 4, 2}}, NetRole::kNetD, 2);
  Rng rng(1);
  const Matrix x = test::random_matrix(5, 3, rng);
  const auto cache = forward(m, x);
  const auto g = backward(m, cache, LossNode{7.0, Matrix(5, 2)});
  for (const auto& t : g.tensors())
    for (double v : t) CHECK(v == 0.0);
}

TEST_CASE("backward: a loss over different logits is not connected") {
  const auto m = init_model(Architecture{{3, 4, 2}}, NetRole::kNetD, 2);
  const auto cache = forward(m, Matrix(5, 3, 1.0));
  CHECK_THROWS_AS(backward(m, cache, LossNode{0.0, Matrix(4, 2)}), ShapeError);
}

TEST_CASE("backward: quadratic loss on a linear model has the closed-form gradient") {
  // L = 0.5 * sum(z^2) with z = W x + b  =>  dW = z x^T, db = z.
  ModelParams m = init_model(Architecture{{2, 2}}, NetRole::kNetD, 1);
  m.params.layers[0].weight = stack_rows({{1.0, 2.0}, {-1.0, 0.5}});
  m.params.layers[0].bias = {0.1, -0.2};
  const Matrix x = stack_rows({{1.0, 3.0}});
  const auto cache = forward(m, x);
  const Matrix& z = cache.logits();
  const auto g = backward(m, cache, LossNode{0.0, z});
  CHECK(g.layers[0].bias[0] == doctest::Approx(z(0, 0)));
  CHECK(g.layers[0].weight(1, 1) == doctest::Approx(z(0, 1) * 3.0));
  CHECK(g.layers[0].weight(0, 0) == doctest::Approx(z(0, 0) * 1.0));
}

TEST_CASE("backward: squared-error loss through two hidden layers passes finite differences") {
  const Architecture arch{{4, 10, 10, 3}};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const auto m = init_model(arch, NetRole::kNetD, seed);
    const Matrix x = test::random_matrix(6, 4, rng);
    const auto mse = [](const Matrix& z) {
      LossNode n{0.0, Matrix(z.rows(), z.cols())};
      for (std::size_t i = 0; i < z.values().size(); ++i) {
        n.value += 0.5 * z.values()[i] * z.values()[i];
        n.d_logits.values()[i] = z.values()[i];
      }
      return n;
    };
    const auto cache = forward(m, x);
    const auto g = backward(m, cache, mse(cache.logits()));
    const auto res = test::finite_difference_check(
        m, g, x, [&](const ModelParams& p) { return mse(forward_logits(p, x)).value; },
        100, seed);
    CHECK(res.checked == 100);
    CHECK(res.max_rel_error <= 1e-3);
  }
}

TEST_CASE("sgd_step: hand iteration of the momentum rule") {
  ModelParams m = init_model(Architecture{{1, 1}}, NetRole::kNetD, 1);
  m.params.layers[0].weight(0, 0) = 1.0;
  m.params.layers[0].bias[0] = 0.0;
  auto opt = make_optim_state(m, 0.1, 0.8, 0.0);
  ParamSet g = m.params.zeros_like();
  g.layers[0].weight(0, 0) = 1.0;
  sgd_step(m, g, opt);
  CHECK(std::abs(opt.velocity.layers[0].weight(0, 0) - 1.0) < 1e-12);
  CHECK(std::abs(m.params.layers[0].weight(0, 0) - 0.9) < 1e-12);
  sgd_step(m, g, opt);
  CHECK(std::abs(opt.velocity.layers[0].weight(0, 0) - 1.8) < 1e-12);
  CHECK(std::abs(m.params.layers[0].weight(0, 0) - 0.72) < 1e-12);
}

TEST_CASE("sgd_step: weight decay is added to the gradient") {
  ModelParams m = init_model(Architecture{{1, 1}}, NetRole::kNetD, 1);
  m.params.layers[0].weight(0, 0) = 2.0;
  auto opt = make_optim_state(m, 0.5, 0.0, 0.1);
  sgd_step(m, m.params.zeros_like(), opt);
  CHECK(std::abs(m.params.layers[0].weight(0, 0) - (2.0 - 0.5 * 0.2)) < 1e-12);
}

TEST_CASE("sgd_step: zero learning rate leaves parameters unchanged") {
  ModelParams m = init_model(Architecture{{3, 4, 2}}, NetRole::kNetD, 3);
  const auto before = m;
  auto opt = make_optim_state(m, 0.0, 0.8, 5e-4);
  ParamSet g = m.params.zeros_like();
  for (auto t : g.tensors())
    for (double& v : t) v = 1.0;
  sgd_step(m, g, opt);
  CHECK(m == before);
}

TEST_CASE("sgd_step: non-finite gradient aborts without touching state") {
  ModelParams m = init_model(Architecture{{3, 2}}, NetRole::kNetD, 3);
  const auto before = m;
  auto opt = make_optim_state(m, 0.1, 0.8, 0.0);
  ParamSet g = m.params.zeros_like();
  g.layers[0].bias[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sgd_step(m, g, opt), NumericError);
  CHECK(m == before);
  for (const auto& t : opt.velocity.tensors())
    for (double v : t) CHECK(v == 0.0);
}

TEST_CASE("sgd_step: descends a smooth objective") {
  Rng rng(4);
  auto m = init_model(Architecture{{4, 8, 3}}, NetRole::kNetD, 4);
  const Matrix x = test::random_matrix(32, 4, rng);
  Matrix y(32, 3);
  for (std::size_t r = 0; r < 32; ++r) y(r, r % 3) = 1.0;
  auto opt = make_optim_state(m, 0.05, 0.8, 0.0);
  const double start = ce_batch(forward_logits(m, x), y).value;
  for (int i = 0; i < 50; ++i) {
    const auto cache = forward(m, x);
    sgd_step(m, backward(m, cache, ce_batch(cache.logits(), y)), opt);
  }
  CHECK(ce_batch(forward_logits(m, x), y).value < start);
}

TEST_CASE("augment: jitter makes distinct views; none is the identity") {
  Rng rng(9);
  const Matrix x = test::random_matrix(1, 6, rng);
  const AugmentSpec jitter{AugmentMode::kGaussianJitter, 0.1};
  const Matrix a = augment(x, jitter, rng);
  const Matrix b = augment(x, jitter, rng);
  CHECK_FALSE(a == b);
  CHECK_FALSE(a == x);
  CHECK(augment(x, AugmentSpec{}, rng) == x);
}
