#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "saunet/ops.hpp"
#include "saunet/tape.hpp"
#include "saunet/tensor.hpp"

using namespace saunet;

TEST_CASE("tensor basics") {
  TensorF t = TensorF::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.ndim() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.dtype() == Dtype::F32);
  TensorD d = TensorD::zeros({4});
  CHECK(d.dtype() == Dtype::F64);
  CHECK_THROWS_AS(TensorF::from_data({2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(TensorF::zeros({2, 0}), Error);
  CHECK_THROWS_AS(t.item(), Error);
  CHECK(TensorF::scalar(3.f).item() == 3.f);
}

TEST_CASE("grad buffer matches shape and zeroing") {
  TensorF t = TensorF::zeros({2, 2}, true);
  CHECK(t.has_grad());
  CHECK(t.grad().size() == 4);
  t.grad()[2] = 5.f;
  t.zero_grad();
  CHECK(t.grad()[2] == 0.f);
  TensorF u = TensorF::zeros({2, 2});
  CHECK_THROWS_AS(u.grad(), Error);
}

TEST_CASE("ewise mul scalar-factor case") {
  // mul([[1,2],[3,4]], [[2,2],[2,2]]) -> [[2,4],[6,8]]
  TensorF a = TensorF::from_data({2, 2}, {1, 2, 3, 4});
  TensorF b = TensorF::filled({2, 2}, 2.f);
  TensorF c = mul<float>(nullptr, a, b);
  CHECK(c.data()[0] == 2.f);
  CHECK(c.data()[1] == 4.f);
  CHECK(c.data()[2] == 6.f);
  CHECK(c.data()[3] == 8.f);
}

TEST_CASE("ewise add identity") {
  TensorF x = TensorF::from_data({3}, {1.5f, -2.f, 0.25f});
  TensorF y = add<float>(nullptr, x, TensorF::scalar(0.f));
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("ewise mul against elementwise loop oracle") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2, 2);
  TensorD a = TensorD::zeros({2, 3, 4, 4});
  TensorD b = TensorD::zeros({2, 3, 4, 4});
  for (auto& v : a.data()) v = u(rng);
  for (auto& v : b.data()) v = u(rng);
  TensorD c = mul<double>(nullptr, a, b);
  for (int64_t i = 0; i < c.numel(); ++i)
    CHECK(c.data()[i] == a.data()[i] * b.data()[i]);  // exact
}

TEST_CASE("broadcast rules and mismatch errors") {
  TensorF a = TensorF::zeros({2, 3, 4, 4});
  TensorF chan = TensorF::filled({2, 1, 4, 4}, 2.f);
  TensorF out = mul<float>(nullptr, a, chan);
  CHECK(out.shape() == std::vector<int>{2, 3, 4, 4});

  TensorF bad = TensorF::zeros({2, 2, 4, 4});
  CHECK_THROWS_WITH_AS(static_cast<void>(mul<float>(nullptr, a, bad)),
                       doctest::Contains("[2x3x4x4]"), Error);
  CHECK_THROWS_WITH_AS(static_cast<void>(mul<float>(nullptr, a, bad)),
                       doctest::Contains("[2x2x4x4]"), Error);
}

TEST_CASE("clamp forward") {
  TensorF x = TensorF::from_data({4}, {-2.f, -0.1f, 0.1f, 2.f});
  TensorF y = clamp<float>(nullptr, x, -1.f, 1.f);
  CHECK(y.data()[0] == -1.f);
  CHECK(y.data()[1] == -0.1f);
  CHECK(y.data()[2] == 0.1f);
  CHECK(y.data()[3] == 1.f);
}

TEST_CASE("concat_channels shape arithmetic and identity") {
  TensorF a = TensorF::filled({1, 2, 4, 4}, 1.f);
  TensorF b = TensorF::filled({1, 3, 4, 4}, 2.f);
  TensorF cat = concat_channels<float>(nullptr, {a, b});
  CHECK(cat.shape() == std::vector<int>{1, 5, 4, 4});
  CHECK(cat.data()[0] == 1.f);
  CHECK(cat.data()[2 * 16] == 2.f);

  TensorF single = concat_channels<float>(nullptr, {a});
  CHECK(single.shape() == a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(single.data()[i] == a.data()[i]);

  TensorF mismatched = TensorF::zeros({1, 2, 3, 4});
  CHECK_THROWS_AS(static_cast<void>(concat_channels<float>(nullptr, {a, mismatched})),
                  Error);
}

TEST_CASE("finite checks raise instead of propagating NaN") {
  TensorF a = TensorF::filled({2}, 1.f);
  TensorF b = TensorF::filled({2}, 0.f);
  CHECK_THROWS_WITH_AS(static_cast<void>(div<float>(nullptr, a, b)),
                       doctest::Contains("non-finite"), Error);
}

TEST_CASE("non-participating leaves keep zero grad") {
  TapeF tape;
  TensorF x = TensorF::filled({2}, 1.f, true);
  TensorF unused = TensorF::filled({2}, 1.f, true);
  TensorF loss = sum_all(&tape, x);
  backward(loss, tape);
  CHECK(x.grad()[0] == 1.f);
  CHECK(unused.grad()[0] == 0.f);
  CHECK(unused.grad()[1] == 0.f);
}

TEST_CASE("tape clear releases recorded nodes") {
  TapeF tape;
  TensorF x = TensorF::filled({8}, 1.f, true);
  TensorF y = relu(&tape, x);
  CHECK(tape.size() == 1);
  tape.clear();
  CHECK(tape.size() == 0);
  (void)y;
}

TEST_CASE("backward requires a scalar loss") {
  TapeF tape;
  TensorF x = TensorF::filled({2, 2}, 1.f, true);
  TensorF y = relu(&tape, x);
  CHECK_THROWS_WITH_AS(backward(y, tape), doctest::Contains("scalar"), Error);
}
