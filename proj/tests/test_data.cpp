#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "saunet/data.hpp"
#include "saunet/metrics.hpp"
#include "saunet/sgt.hpp"
#include "saunet/synth.hpp"

using namespace saunet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("sgt round trip is bit identical") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-10, 10);
  TensorF t = TensorF::zeros({2, 3, 4});
  for (auto& v : t.data()) v = u(rng);
  const auto path = (temp_dir("sgt_rt") / "t.sgt").string();
  sgt_write(path, t);
  TensorF back = sgt_read(path);
  REQUIRE(back.shape() == t.shape());
  for (int64_t i = 0; i < t.numel(); ++i) CHECK(back.data()[i] == t.data()[i]);
}

TEST_CASE("sgt scalar file size and little-endian layout") {
  const auto dir = temp_dir("sgt_fmt");
  const auto path = (dir / "one.sgt").string();
  sgt_write(path, TensorF::from_data({1}, {1.0f}));
  CHECK(fs::file_size(path) == 16);  // magic + ndim + dim + payload

  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes(16);
  is.read(reinterpret_cast<char*>(bytes.data()), 16);
  CHECK(bytes[0] == 'S');
  CHECK(bytes[1] == 'G');
  CHECK(bytes[2] == 'T');
  CHECK(bytes[3] == '1');
  // IEEE-754 1.0f little-endian
  CHECK(bytes[12] == 0x00);
  CHECK(bytes[13] == 0x00);
  CHECK(bytes[14] == 0x80);
  CHECK(bytes[15] == 0x3F);
}

TEST_CASE("sgt bad magic and truncation errors carry byte offsets") {
  const auto dir = temp_dir("sgt_err");
  const auto bad = (dir / "bad.sgt").string();
  {
    std::ofstream os(bad, std::ios::binary);
    os << "NOPE1234";
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(sgt_read(bad)), doctest::Contains("magic"),
                       Error);
  const auto trunc = (dir / "trunc.sgt").string();
  {
    sgt_write(trunc, TensorF::filled({4, 4}, 1.f));
    fs::resize_file(trunc, 20);  // cut into the payload
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(sgt_read(trunc)),
                       doctest::Contains("byte offset"), Error);
}

TEST_CASE("resample_to_spacing doubles dims at 2.5mm and is identity at target") {
  FloatMap img(10, 10);
  IntMap lab(10, 10);
  for (int i = 0; i < 100; ++i) img.v[static_cast<size_t>(i)] = static_cast<float>(i);
  lab.at(4, 4) = 2;
  std::pair<float, float> spacing{2.5f, 2.5f};
  resample_to_spacing(img, lab, spacing);
  CHECK(img.h == 20);
  CHECK(img.w == 20);
  CHECK(spacing.first == 1.25f);

  FloatMap img2(8, 8, 3.f);
  IntMap lab2(8, 8, 1);
  std::pair<float, float> sp2{1.25f, 1.25f};
  resample_to_spacing(img2, lab2, sp2);
  CHECK(img2.h == 8);
  CHECK(img2.w == 8);
}

TEST_CASE("resampled label maps never invent new values") {
  std::mt19937_64 rng(5);
  FloatMap img(9, 11);
  IntMap lab(9, 11);
  for (auto& v : lab.v) v = static_cast<int32_t>(rng() % 3) + 1;
  std::pair<float, float> spacing{1.7f, 2.1f};
  resample_to_spacing(img, lab, spacing);
  for (auto v : lab.v) {
    CHECK(v >= 1);
    CHECK(v <= 3);
  }
}

TEST_CASE("center_crop_pad crops, pads and zeroes the slice minimum") {
  // 300x300 -> 256x256 centered window
  FloatMap big(300, 300, 1.f);
  IntMap lab_big(300, 300, 1);
  big.at(150, 150) = 9.f;
  center_crop_pad(big, lab_big, 256, 256);
  CHECK(big.h == 256);
  CHECK(big.at(128, 128) == 8.f);  // min 1 subtracted

  // 200x200 -> 256x256 with a 28px zero border
  FloatMap small(200, 200, 7.f);
  IntMap lab_small(200, 200, 2);
  small.at(0, 0) = 7.f;  // min is 7 -> subtracted to 0 everywhere
  center_crop_pad(small, lab_small, 256, 256);
  CHECK(small.h == 256);
  CHECK(small.at(0, 0) == 0.f);         // pad corner
  CHECK(small.at(128, 128) == 0.f);     // former-min pixel, also 0
  CHECK(lab_small.at(0, 0) == 0);       // labels pad with background
  CHECK(lab_small.at(128, 128) == 2);
  CHECK(small.at(27, 27) == 0.f);
  CHECK(lab_small.at(28, 28) == 2);
}

TEST_CASE("zscore normalizes and warns on constant slices") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u(3, 9);
  FloatMap img(16, 16);
  for (auto& v : img.v) v = u(rng);
  CHECK(zscore(img));
  double mean = 0, var = 0;
  for (float v : img.v) mean += v;
  mean /= 256;
  for (float v : img.v) var += (v - mean) * (v - mean);
  var /= 256;
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-4);

  // near-idempotent on already-normalized input
  FloatMap copy = img;
  CHECK(zscore(copy));
  for (size_t i = 0; i < copy.v.size(); ++i)
    CHECK(copy.v[i] == doctest::Approx(img.v[i]).epsilon(1e-4));

  FloatMap flat(4, 4, 5.f);
  CHECK_FALSE(zscore(flat));
  for (float v : flat.v) CHECK(v == 0.f);
}

TEST_CASE("augment identity when all parameters are neutral") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0, 1);
  FloatMap img(16, 16);
  IntMap lab(16, 16);
  for (auto& v : img.v) v = u(rng);
  for (auto& v : lab.v) v = static_cast<int32_t>(rng() % 4);
  FloatMap img0 = img;
  IntMap lab0 = lab;
  AugmentParams p;  // all neutral by default
  apply_augment(img, lab, p);
  for (size_t i = 0; i < img.v.size(); ++i) CHECK(img.v[i] == img0.v[i]);
  CHECK(lab.v == lab0.v);
}

TEST_CASE("horizontal flip twice is identity") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0, 1);
  FloatMap img(12, 12);
  IntMap lab(12, 12);
  for (auto& v : img.v) v = u(rng);
  for (auto& v : lab.v) v = static_cast<int32_t>(rng() % 3);
  FloatMap img0 = img;
  IntMap lab0 = lab;
  AugmentParams p;
  p.flip_h = true;
  apply_augment(img, lab, p);
  apply_augment(img, lab, p);
  for (size_t i = 0; i < img.v.size(); ++i) CHECK(img.v[i] == img0.v[i]);
  CHECK(lab.v == lab0.v);
}

TEST_CASE("pure 90-degree rotation matches the exact index-permutation oracle") {
  std::mt19937_64 rng(13);
  const int n = 17;  // odd grid keeps the center on a pixel
  FloatMap img(n, n);
  IntMap lab(n, n);
  for (auto& v : img.v) v = static_cast<float>(rng() % 100) / 10.f;
  for (auto& v : lab.v) v = static_cast<int32_t>(rng() % 4);
  IntMap lab_in = lab;

  AugmentParams p;
  p.angle = 3.14159265358979f / 2.f;
  apply_augment(img, lab, p);

  // exact 90-degree index permutation of the input labels
  IntMap expect(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      // inverse mapping: source = center + R(-90) * (dest - center)
      const int dy = y - n / 2, dx = x - n / 2;
      const int sy = n / 2 + dx, sx = n / 2 - dy;
      expect.at(y, x) = lab_in.at(sy, sx);
    }
  CHECK(dice_coefficient(lab, expect, 1) == 1.0);
  CHECK(dice_coefficient(lab, expect, 2) == 1.0);
  CHECK(dice_coefficient(lab, expect, 3) == 1.0);
}

TEST_CASE("gamma shift keeps range endpoints and direction") {
  FloatMap img(2, 2);
  img.v = {0.f, 0.25f, 0.5f, 1.f};
  IntMap lab(2, 2);
  AugmentParams p;
  p.gamma = 2.f;
  apply_augment(img, lab, p);
  CHECK(img.v[0] == doctest::Approx(0.f));
  CHECK(img.v[1] == doctest::Approx(0.0625f));
  CHECK(img.v[2] == doctest::Approx(0.25f));
  CHECK(img.v[3] == doctest::Approx(1.f));
}

TEST_CASE("elastic deformation is seed-deterministic and bounded") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<float> u(0, 1);
  FloatMap a(32, 32), b(32, 32);
  IntMap la(32, 32), lb(32, 32);
  for (size_t i = 0; i < a.v.size(); ++i) {
    a.v[i] = b.v[i] = u(rng);
    la.v[i] = lb.v[i] = static_cast<int32_t>(rng() % 2);
  }
  AugmentParams p;
  p.elastic_alpha = 5.f;
  p.elastic_seed = 42;
  apply_augment(a, la, p);
  apply_augment(b, lb, p);
  for (size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]);
  CHECK(la.v == lb.v);
}

TEST_CASE("manifest round trip, split determinism and duplicate detection") {
  const auto dir = temp_dir("manifest_rt");
  SynthOptions opt;
  opt.n = 20;
  opt.size = 16;
  opt.seed = 3;
  synth_generate(dir.string(), opt);

  DatasetManifest m = manifest_read(dir.string());
  CHECK(m.rows.size() == 20);
  CHECK(m.num_classes == 4);
  CHECK(m.split_rows("train").size() == 16);
  CHECK(m.split_rows("val").size() == 4);

  // split is deterministic, disjoint and covers all ids
  DatasetManifest m2 = m;
  split_dataset(m2, 0.8, 99);
  DatasetManifest m3 = m;
  split_dataset(m3, 0.8, 99);
  for (size_t i = 0; i < m2.rows.size(); ++i)
    CHECK(m2.rows[i].split == m3.rows[i].split);
  size_t train_n = 0, val_n = 0;
  for (const auto& r : m2.rows) (r.split == "train" ? train_n : val_n) += 1;
  CHECK(train_n == 16);
  CHECK(val_n == 4);

  // union of splits covers all ids exactly once, intersection empty
  std::vector<std::string> train_ids, val_ids;
  for (const auto& r : m2.rows)
    (r.split == "train" ? train_ids : val_ids).push_back(r.id);
  for (const auto& t : train_ids)
    for (const auto& v : val_ids) CHECK(t != v);
  CHECK(train_ids.size() + val_ids.size() == m2.rows.size());

  // unknown id lookup
  CHECK_THROWS_WITH_AS(m.find("nope"), doctest::Contains("unknown sample id"), Error);
}

TEST_CASE("load_sample produces aligned grids with valid labels") {
  const auto dir = temp_dir("load_sample");
  SynthOptions opt;
  opt.n = 4;
  opt.size = 24;
  opt.seed = 5;
  synth_generate(dir.string(), opt);
  DatasetManifest m = manifest_read(dir.string());

  PipelineOptions pipe;
  pipe.crop = 24;
  pipe.augment = true;
  SegSample s = load_sample(m, m.rows[0], pipe, 123);
  CHECK(s.image.shape() == std::vector<int>{1, 24, 24});
  CHECK(s.labels.h == 24);
  CHECK(s.boundary.h == 24);
  CHECK(s.canny_edges.h == 24);
  for (auto v : s.labels.v) {
    CHECK(v >= 0);
    CHECK(v < 4);
  }
  // replay with the same seed is exact
  SegSample s2 = load_sample(m, m.rows[0], pipe, 123);
  for (int64_t i = 0; i < s.image.numel(); ++i)
    CHECK(s.image.data()[i] == s2.image.data()[i]);
  CHECK(s.labels.v == s2.labels.v);
  // another seed changes the augmentation
  SegSample s3 = load_sample(m, m.rows[0], pipe, 124);
  bool any_diff = false;
  for (int64_t i = 0; i < s.image.numel(); ++i)
    any_diff = any_diff || s.image.data()[i] != s3.image.data()[i];
  CHECK(any_diff);
}
