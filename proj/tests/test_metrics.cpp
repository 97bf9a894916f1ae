#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "saunet/metrics.hpp"

using namespace saunet;

namespace {

IntMap map_of(int h, int w, const std::vector<int32_t>& v) {
  IntMap m(h, w);
  m.v = v;
  return m;
}

}  // namespace

TEST_CASE("dice coefficient reference cases") {
  IntMap a = map_of(2, 2, {1, 1, 0, 0});
  CHECK(dice_coefficient(a, a, 1) == 1.0);

  IntMap b = map_of(2, 2, {0, 0, 1, 1});
  CHECK(dice_coefficient(a, b, 1) == 0.0);

  // |A| = |B| = 4, overlap 2 -> 0.5
  IntMap p = map_of(3, 3, {1, 1, 1, 1, 0, 0, 0, 0, 0});
  IntMap t = map_of(3, 3, {0, 0, 1, 1, 1, 1, 0, 0, 0});
  CHECK(dice_coefficient(p, t, 1) == 0.5);

  // both empty -> 1 by convention
  IntMap z = map_of(2, 2, {0, 0, 0, 0});
  CHECK(dice_coefficient(z, z, 3) == 1.0);
}

TEST_CASE("miou reference cases") {
  IntMap a = map_of(2, 2, {1, 2, 0, 0});
  CHECK(miou(a, a, {0, 1, 2}) == 1.0);

  IntMap d1 = map_of(2, 2, {1, 0, 0, 0});
  IntMap d2 = map_of(2, 2, {0, 1, 0, 0});
  CHECK(iou(d1, d2, 1) == 0.0);

  // half-overlapping equal squares: IoU = 2/(4+4-2) = 1/3
  IntMap s1 = map_of(2, 4, {1, 1, 0, 0, 1, 1, 0, 0});
  IntMap s2 = map_of(2, 4, {0, 1, 1, 0, 0, 1, 1, 0});
  CHECK(iou(s1, s2, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(miou(s1, s2, {}), Error);
}

TEST_CASE("boundary f1 reference cases") {
  IntMap a(8, 8);
  for (int y = 2; y <= 5; ++y)
    for (int x = 2; x <= 5; ++x) a.at(y, x) = 1;
  CHECK(boundary_f1(a, a, 0) == 1.0);
  CHECK(boundary_f1(a, a, 2) == 1.0);

  IntMap empty(8, 8);
  CHECK(boundary_f1(empty, empty, 1) == 1.0);
  CHECK(boundary_f1(a, empty, 1) == 0.0);

  // one-pixel shifted square: tolerance 1 matches fully
  IntMap shifted(8, 8);
  for (int y = 2; y <= 5; ++y)
    for (int x = 3; x <= 6; ++x) shifted.at(y, x) = 1;
  CHECK(boundary_f1(a, shifted, 1) == 1.0);

  // tolerance 0: compare against a brute-force matcher
  const Mask pb = mask_to_boundary(shifted);
  const Mask tb = mask_to_boundary(a);
  size_t matched_p = 0, matched_t = 0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      if (pb.at(y, x) && tb.at(y, x)) ++matched_p;
      if (tb.at(y, x) && pb.at(y, x)) ++matched_t;
    }
  const double precision = double(matched_p) / double(pb.count());
  const double recall = double(matched_t) / double(tb.count());
  const double expect =
      precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  CHECK(boundary_f1(shifted, a, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("metrics are invariant under consistent pixel permutation") {
  std::mt19937_64 rng(3);
  const int h = 6, w = 6;
  IntMap a(h, w), b(h, w);
  for (auto& v : a.v) v = static_cast<int32_t>(rng() % 3);
  for (auto& v : b.v) v = static_cast<int32_t>(rng() % 3);
  std::vector<size_t> perm(static_cast<size_t>(h) * w);
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  IntMap ap(h, w), bp(h, w);
  for (size_t i = 0; i < perm.size(); ++i) {
    ap.v[i] = a.v[perm[i]];
    bp.v[i] = b.v[perm[i]];
  }
  for (int c = 0; c < 3; ++c) {
    CHECK(dice_coefficient(a, b, c) == dice_coefficient(ap, bp, c));
    CHECK(iou(a, b, c) == iou(ap, bp, c));
  }
}

TEST_CASE("mask_to_boundary brute-force cases") {
  IntMap uniform(4, 4, 2);
  CHECK(mask_to_boundary(uniform).count() == 0);

  IntMap single(5, 5);
  single.at(2, 2) = 1;
  Mask m = mask_to_boundary(single);
  // the pixel itself and its 4 background neighbours flip
  CHECK(m.at(2, 2) == 1);
  CHECK(m.at(1, 2) == 1);
  CHECK(m.at(3, 2) == 1);
  CHECK(m.at(2, 1) == 1);
  CHECK(m.at(2, 3) == 1);
  CHECK(m.count() == 5);
  Mask dilated = mask_to_boundary(single, 1);
  CHECK(dilated.count() > m.count());

  // 2x2 foreground block in a 4x4 grid vs a scan oracle
  IntMap block(4, 4);
  for (int y = 1; y <= 2; ++y)
    for (int x = 1; x <= 2; ++x) block.at(y, x) = 1;
  Mask got = mask_to_boundary(block);
  const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      int expect = 0;
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= 4 || nx < 0 || nx >= 4) continue;
        if (block.at(ny, nx) != block.at(y, x) &&
            (block.at(y, x) != 0 || block.at(ny, nx) != 0))
          expect = 1;
      }
      CHECK(got.at(y, x) == expect);
    }
}

TEST_CASE("metric report means equal arithmetic means of per-class values") {
  std::mt19937_64 rng(5);
  MetricAccumulator acc(4, 1);
  for (int s = 0; s < 3; ++s) {
    IntMap pred(8, 8), truth(8, 8);
    for (auto& v : pred.v) v = static_cast<int32_t>(rng() % 4);
    for (auto& v : truth.v) v = static_cast<int32_t>(rng() % 4);
    acc.add(pred, truth);
  }
  MetricReport r = acc.report();
  CHECK(r.classes == std::vector<int>{1, 2, 3});
  double mean = 0;
  for (double d : r.dice) mean += d;
  mean /= static_cast<double>(r.dice.size());
  CHECK(r.mean_dice == doctest::Approx(mean).epsilon(1e-12));
  const std::string json = r.to_json();
  CHECK(json.find("\"mean_dice\"") != std::string::npos);
  CHECK(json.find("\"boundary_f1\"") != std::string::npos);
}
