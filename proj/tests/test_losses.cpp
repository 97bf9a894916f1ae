#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "saunet/gradcheck.hpp"
#include "saunet/losses.hpp"
#include "saunet/metrics.hpp"

using namespace saunet;

namespace {

TensorD onehot(const std::vector<int>& labels, int n, int k, int h, int w) {
  TensorD y = TensorD::zeros({n, k, h, w});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int64_t p = 0; p < hw; ++p)
      y.raw()[(static_cast<int64_t>(i) * k + labels[static_cast<size_t>(i * hw + p)]) * hw + p] = 1.0;
  return y;
}

}  // namespace

TEST_CASE("cross entropy of an exact prediction is ~0") {
  TensorD y = onehot({0, 1, 1, 0}, 1, 2, 2, 2);
  // logits strongly favoring the true class
  TensorD logits = TensorD::zeros({1, 2, 2, 2});
  for (int c = 0; c < 2; ++c)
    for (int p = 0; p < 4; ++p)
      logits.raw()[c * 4 + p] = y.data()[c * 4 + p] > 0.5 ? 40.0 : -40.0;
  CHECK(cross_entropy<double>(nullptr, logits, y).item() < 1e-6);
}

TEST_CASE("cross entropy of a uniform prediction is log K") {
  for (int k : {2, 3, 4, 7}) {
    TensorD y = TensorD::zeros({1, k, 2, 2});
    for (int p = 0; p < 4; ++p) y.raw()[(p % k) * 4 + p] = 1.0;
    TensorD logits = TensorD::filled({1, k, 2, 2}, 0.31);
    const double ce = cross_entropy<double>(nullptr, logits, y).item();
    CHECK(ce == doctest::Approx(std::log(double(k))).epsilon(1e-9));
  }
}

TEST_CASE("cross entropy matches a scalar hand evaluation") {
  // random 2-class 2x2 case
  TensorD y = onehot({0, 1, 0, 1}, 1, 2, 2, 2);
  TensorD logits =
      TensorD::from_data({1, 2, 2, 2}, {0.2, -1.1, 0.4, 0.9, -0.3, 0.8, -1.5, 0.1});
  double expect = 0.0;
  for (int p = 0; p < 4; ++p) {
    const double a = logits.data()[p], b = logits.data()[4 + p];
    const double m = std::max(a, b);
    const double pa = std::exp(a - m) / (std::exp(a - m) + std::exp(b - m));
    const double pb = 1.0 - pa;
    const double target_prob = y.data()[p] > 0.5 ? pa : pb;
    expect -= std::log(std::min(std::max(target_prob, 1e-7), 1.0 - 1e-7));
  }
  expect /= 4.0;
  CHECK(cross_entropy<double>(nullptr, logits, y).item() ==
        doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("cross entropy validates shapes and one-hot targets") {
  TensorD y = onehot({0, 1, 1, 0}, 1, 2, 2, 2);
  TensorD logits = TensorD::zeros({1, 3, 2, 2});
  CHECK_THROWS_WITH_AS(static_cast<void>(cross_entropy<double>(nullptr, logits, y)),
                       doctest::Contains("mismatch"), Error);
  TensorD not_onehot = TensorD::filled({1, 2, 2, 2}, 0.5);
  TensorD l2 = TensorD::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(static_cast<void>(cross_entropy<double>(nullptr, l2, not_onehot)),
                  Error);
}

TEST_CASE("dice loss of a perfect crisp prediction is ~0") {
  TensorD y = onehot({0, 1, 2, 3, 0, 1, 2, 3, 3, 2, 1, 0, 1, 0, 3, 2}, 1, 4, 4, 4);
  CHECK(dice_loss<double>(nullptr, y, y).item() < 1e-5);
}

TEST_CASE("dice loss binary hand case: uniform 0.5 prediction") {
  // y = [1,1,0,0] for class 1; prediction 0.5 everywhere.
  // class-1 term: sum(y*p)=1, sum(y+p)=4 -> 2*1/4 = 0.5; same for class 0.
  TensorD y = onehot({1, 1, 0, 0}, 1, 2, 2, 2);
  TensorD p = TensorD::filled({1, 2, 2, 2}, 0.5);
  const double loss = dice_loss<double>(nullptr, p, y).item();
  CHECK(loss == doctest::Approx(1.0 - 0.5).epsilon(1e-5));
}

TEST_CASE("dice loss of a completely disjoint crisp prediction is ~1") {
  TensorD y = onehot({0, 0, 0, 0}, 1, 2, 2, 2);
  TensorD p = onehot({1, 1, 1, 1}, 1, 2, 2, 2);
  CHECK(dice_loss<double>(nullptr, p, y).item() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("dice loss with crisp prediction ~ 1 - mean dice coefficient") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cls(0, 2);
  const int k = 3, h = 6, w = 6;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> truth(h * w), pred(h * w);
    // ensure every class present in both maps
    for (int i = 0; i < h * w; ++i) {
      truth[static_cast<size_t>(i)] = i < k ? i : cls(rng);
      pred[static_cast<size_t>(i)] = i < k ? i : cls(rng);
    }
    TensorD y = onehot(truth, 1, k, h, w);
    TensorD p = onehot(pred, 1, k, h, w);
    const double loss = dice_loss<double>(nullptr, p, y).item();

    IntMap tm(h, w), pm(h, w);
    for (int i = 0; i < h * w; ++i) {
      tm.v[static_cast<size_t>(i)] = truth[static_cast<size_t>(i)];
      pm.v[static_cast<size_t>(i)] = pred[static_cast<size_t>(i)];
    }
    double mean_dice = 0;
    for (int c = 0; c < k; ++c) mean_dice += dice_coefficient(pm, tm, c);
    mean_dice /= k;
    CHECK(loss == doctest::Approx(1.0 - mean_dice).epsilon(1e-4));
  }
}

TEST_CASE("edge bce analytic values") {
  TensorD gt = TensorD::from_data({1, 1, 2, 2}, {1, 0, 1, 0});
  TensorD saturated = TensorD::from_data({1, 1, 2, 2}, {40, -40, 40, -40});
  CHECK(edge_bce<double>(nullptr, saturated, gt).item() < 1e-6);

  TensorD zeros = TensorD::zeros({1, 1, 2, 2});
  CHECK(edge_bce<double>(nullptr, zeros, gt).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  TensorD not_binary = TensorD::filled({1, 1, 2, 2}, 0.25);
  CHECK_THROWS_WITH_AS(static_cast<void>(edge_bce<double>(nullptr, zeros, not_binary)),
                       doctest::Contains("binary"), Error);
}

TEST_CASE("edge bce 2x2 mixed case vs scalar oracle") {
  TensorD gt = TensorD::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
  TensorD logits = TensorD::from_data({1, 1, 2, 2}, {0.3, -0.7, 1.2, -0.1});
  double expect = 0;
  for (int i = 0; i < 4; ++i) {
    const double q = 1.0 / (1.0 + std::exp(-logits.data()[i]));
    const double g = gt.data()[i];
    expect -= g * std::log(q) + (1 - g) * std::log(1 - q);
  }
  expect /= 4;
  CHECK(edge_bce<double>(nullptr, logits, gt).item() ==
        doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("total loss composition and exact linearity in the weights") {
  TensorD ce = TensorD::scalar(0.7);
  TensorD dl = TensorD::scalar(0.2);
  TensorD eb = TensorD::scalar(0.05);
  const double a = total_loss<double>(nullptr, ce, dl, eb, {1, 1, 1}).item();
  CHECK(a == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(total_loss<double>(nullptr, ce, dl, eb, {1, 0, 0}).item() == 0.7);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 2);
  for (int i = 0; i < 20; ++i) {
    const double l1 = u(rng), l2 = u(rng), l3 = u(rng);
    const double v =
        total_loss<double>(nullptr, ce, dl, eb,
                           {l1, l2, l3})
            .item();
    // volatiles pin the per-op rounding so the comparison is bit-exact
    volatile double t1 = l1 * ce.item();
    volatile double t2 = l2 * dl.item();
    volatile double t3 = l3 * eb.item();
    volatile double t12 = t1 + t2;
    CHECK(v == t12 + t3);  // exact linearity
  }
  CHECK_THROWS_AS(
      static_cast<void>(total_loss<double>(nullptr, ce, dl, eb, {0, 0, 0})), Error);
}

TEST_CASE("total loss gradient is the weighted sum of component gradients") {
  std::mt19937_64 rng(9);
  TensorD y = onehot({0, 1, 2, 0, 1, 2, 2, 1, 0}, 1, 3, 3, 3);
  TensorD gt = TensorD::zeros({1, 1, 3, 3});
  for (auto& v : gt.data()) v = (rng() & 1) ? 1.0 : 0.0;
  auto fn = [y, gt](TapeD& t, std::vector<TensorD>& in) {
    TensorD ce = cross_entropy(&t, in[0], y);
    TensorD dl = dice_loss(&t, softmax_channels(&t, in[0]), y);
    TensorD eb = edge_bce(&t, in[1], gt);
    return total_loss(&t, ce, dl, eb, LossWeights<double>{0.7, 1.3, 2.1});
  };
  auto res = grad_check("total_loss_weighted", fn,
                        {random_uniform<double>({1, 3, 3, 3}, -2, 2, rng),
                         random_uniform<double>({1, 1, 3, 3}, -2, 2, rng)});
  CHECK(res.pass);
}

TEST_CASE("losses stay finite and nonnegative on clamped inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    TensorD logits = random_uniform<double>({2, 3, 4, 4}, -50, 50, rng);
    std::vector<int> labels(2 * 16);
    for (auto& l : labels) l = static_cast<int>(rng() % 3);
    TensorD y = onehot(labels, 2, 3, 4, 4);
    const double ce = cross_entropy<double>(nullptr, logits, y).item();
    const double dl =
        dice_loss<double>(nullptr, softmax_channels<double>(nullptr, logits), y).item();
    CHECK(std::isfinite(ce));
    CHECK(ce >= 0.0);
    CHECK(std::isfinite(dl));
    CHECK(dl >= -1e-9);
    CHECK(dl <= 1.0 + 1e-9);
  }
}
