#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saunet/optim.hpp"

using namespace saunet;

namespace {

// Standalone scalar transcription of the rectified-Adam recurrence, kept
// independent of the optimizer implementation.
struct ScalarRadamOracle {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, wd = 0.0;
  double m = 0, v = 0, theta;
  int t = 0;

  explicit ScalarRadamOracle(double theta0) : theta(theta0) {}

  void step(double grad, double lr) {
    ++t;
    if (wd != 0.0) theta -= lr * wd * theta;
    m = beta1 * m + (1 - beta1) * grad;
    v = beta2 * v + (1 - beta2) * grad * grad;
    const double b1t = std::pow(beta1, t), b2t = std::pow(beta2, t);
    const double mhat = m / (1 - b1t);
    const double rho_inf = 2.0 / (1 - beta2) - 1.0;
    const double rho = rho_inf - 2.0 * t * b2t / (1 - b2t);
    if (rho > 4.0) {
      const double r = std::sqrt(((rho - 4) * (rho - 2) * rho_inf) /
                                 ((rho_inf - 4) * (rho_inf - 2) * rho));
      theta -= lr * r * mhat / (std::sqrt(v / (1 - b2t)) + eps);
    } else {
      theta -= lr * mhat;
    }
  }
};

}  // namespace

TEST_CASE("radam scalar recurrence matches the oracle for t = 1..6") {
  ParamRegistry<double> reg;
  Tensor<double> p = reg.create("p", {1}, true);
  p.raw()[0] = 0.5;
  RAdam<double> opt(reg, RAdamConfig<double>{0.9, 0.999, 0.0, 1e-8});
  ScalarRadamOracle oracle(0.5);
  const double lr = 1e-2;
  for (int t = 1; t <= 6; ++t) {
    p.zero_grad();
    p.grad()[0] = 1.0;  // constant gradient
    opt.step(lr);
    oracle.step(1.0, lr);
    CAPTURE(t);
    CHECK(p.raw()[0] == doctest::Approx(oracle.theta).epsilon(1e-12));
  }
  CHECK(opt.step_count() == 6);
}

TEST_CASE("radam with varying gradients and weight decay matches the oracle") {
  ParamRegistry<double> reg;
  Tensor<double> p = reg.create("p", {1}, true);
  p.raw()[0] = -1.2;
  RAdam<double> opt(reg, RAdamConfig<double>{0.9, 0.999, 0.01, 1e-8});
  ScalarRadamOracle oracle(-1.2);
  oracle.wd = 0.01;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 1; t <= 25; ++t) {
    const double g = u(rng);
    p.zero_grad();
    p.grad()[0] = g;
    opt.step(5e-3);
    oracle.step(g, 5e-3);
    CHECK(p.raw()[0] == doctest::Approx(oracle.theta).epsilon(1e-10));
  }
}

TEST_CASE("zero gradient with zero weight decay leaves the parameter unchanged") {
  ParamRegistry<float> reg;
  Tensor<float> p = reg.create("p", {4}, true);
  for (int i = 0; i < 4; ++i) p.raw()[i] = 1.f + i;
  RAdam<float> opt(reg, RAdamConfig<float>{});
  for (int t = 0; t < 10; ++t) {
    p.zero_grad();
    opt.step(1e-3f);
  }
  for (int i = 0; i < 4; ++i) CHECK(p.raw()[i] == 1.f + i);
}

TEST_CASE("zero gradient with weight decay shrinks multiplicatively") {
  ParamRegistry<float> reg;
  Tensor<float> p = reg.create("p", {1}, true);
  p.raw()[0] = 2.f;
  const float wd = 0.1f, lr = 0.01f;
  RAdam<float> opt(reg, RAdamConfig<float>{0.9f, 0.999f, wd, 1e-8f});
  p.zero_grad();
  opt.step(lr);
  CHECK(p.raw()[0] == doctest::Approx(2.f * (1.f - lr * wd)).epsilon(1e-6));
}

TEST_CASE("nan gradient aborts naming the parameter") {
  ParamRegistry<float> reg;
  Tensor<float> p = reg.create("enc.w", {2}, true);
  RAdam<float> opt(reg, RAdamConfig<float>{});
  p.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(opt.step(1e-3f), doctest::Contains("enc.w"), Error);
}

TEST_CASE("optimizer covers every trainable parameter") {
  ParamRegistry<float> reg;
  reg.create("a", {3}, true);
  reg.create("stats", {3}, false);
  reg.create("b", {2, 2}, true);
  RAdam<float> opt(reg, RAdamConfig<float>{});
  CHECK(opt.num_params() == 2);
}

TEST_CASE("optimizer state round-trips through checkpoint entries") {
  ParamRegistry<float> reg;
  Tensor<float> p = reg.create("p", {3}, true);
  RAdam<float> a(reg, RAdamConfig<float>{});
  for (int t = 0; t < 5; ++t) {
    p.zero_grad();
    for (auto& g : p.grad()) g = 0.3f;
    a.step(1e-3f);
  }
  const auto entries = a.to_entries();
  RAdam<float> b(reg, RAdamConfig<float>{});
  b.load_entries(entries);
  CHECK(b.step_count() == 5);
  // identical next step from identical state
  ParamRegistry<float> reg2;
  Tensor<float> q = reg2.create("p", {3}, true);
  for (int i = 0; i < 3; ++i) q.raw()[i] = p.raw()[i];
  RAdam<float> c(reg2, RAdamConfig<float>{});
  c.load_entries(entries);
  p.zero_grad();
  q.zero_grad();
  for (auto& g : p.grad()) g = -0.2f;
  for (auto& g : q.grad()) g = -0.2f;
  b.step(1e-3f);
  c.step(1e-3f);
  for (int i = 0; i < 3; ++i) CHECK(p.raw()[i] == q.raw()[i]);
}

TEST_CASE("lr schedule") {
  CHECK(lr_schedule(7e-4, 0.99, 0) == 7e-4);
  CHECK(lr_schedule(7e-4, 0.99, 1) == doctest::Approx(6.93e-4).epsilon(1e-12));
  double prev = 1e9;
  for (int e = 0; e < 50; ++e) {
    const double lr = lr_schedule(5e-4, 0.99, e);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_schedule(1e-3, 0.0, 1), Error);
  CHECK_THROWS_AS(lr_schedule(1e-3, 1.5, 1), Error);
}
