#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "saunet/interpret.hpp"
#include "saunet/ops.hpp"
#include "saunet/synth.hpp"
#include "saunet/trainer.hpp"

using namespace saunet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Fixture {
  DatasetManifest data;
  ModelF model{ModelConfig::tiny(), 29};
  SegSample sample;

  Fixture() {
    const auto dir = temp_dir("interp_data");
    SynthOptions opt;
    opt.n = 6;
    opt.size = 32;
    opt.seed = 29;
    synth_generate(dir.string(), opt);
    data = manifest_read(dir.string());
    PipelineOptions pipe;
    pipe.crop = 32;
    sample = load_sample(data, data.rows[0], pipe, 0);
    // populate BN running stats with a couple of train-mode passes
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.lr0 = 1e-3;
    cfg.seed = 29;
    cfg.pipeline.crop = 32;
    Trainer trainer(model, cfg, data);
    trainer.train_epoch(0);
  }
};

}  // namespace

TEST_CASE("extract returns the full bundle with one forward pass") {
  Fixture f;
  const int64_t before = f.model.num_forward_passes();
  AttentionBundle<float> bundle = extract(f.model, f.sample);
  CHECK(f.model.num_forward_passes() == before + 1);
  CHECK(bundle.alphas.size() == 3);
  CHECK(bundle.spatial_maps.size() == 3);
  CHECK(bundle.shape_map.defined());
  auto in01 = [](const TensorF& t) {
    for (float v : t.data())
      if (v < 0.f || v > 1.f) return false;
    return true;
  };
  for (const auto& a : bundle.alphas) CHECK(in01(a));
  for (const auto& s : bundle.spatial_maps) CHECK(in01(s));
  CHECK(in01(bundle.shape_map));

  // repeated extraction is bit-identical in eval mode
  AttentionBundle<float> again = extract(f.model, f.sample);
  for (size_t i = 0; i < bundle.alphas.size(); ++i)
    for (int64_t j = 0; j < bundle.alphas[i].numel(); ++j)
      CHECK(bundle.alphas[i].data()[j] == again.alphas[i].data()[j]);
}

TEST_CASE("threshold_map endpoints, monotonicity and loop oracle") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  TensorF map = TensorF::zeros({1, 1, 8, 8});
  for (auto& v : map.data()) v = u(rng);

  Mask all = threshold_map(map, 0.f);
  CHECK(all.count() == 64);  // tau 0 -> all ones
  Mask none = threshold_map(TensorF::filled({1, 1, 4, 4}, 0.3f), 0.9f);
  CHECK(none.count() == 0);

  Mask t06 = threshold_map(map, 0.6f);
  Mask t08 = threshold_map(map, 0.8f);
  for (size_t i = 0; i < t08.v.size(); ++i)
    if (t08.v[i]) CHECK(t06.v[i]);  // mask(0.8) subset of mask(0.6)

  for (int64_t i = 0; i < map.numel(); ++i)
    CHECK(t06.v[static_cast<size_t>(i)] == (map.data()[i] >= 0.6f ? 1 : 0));

  CHECK_THROWS_AS(threshold_map(map, 1.5f), Error);
}

TEST_CASE("zero map renders as the plain grayscale base") {
  Fixture f;
  TensorF zero = TensorF::zeros({1, 1, 32, 32});
  OverlayImage img = render_overlay(f.sample, zero, -1.f, "zero");
  REQUIRE(img.rgb.size() == 32 * 32 * 3);
  // grayscale: r == g == b everywhere
  for (size_t i = 0; i < img.rgb.size(); i += 3) {
    CHECK(img.rgb[i] == img.rgb[i + 1]);
    CHECK(img.rgb[i] == img.rgb[i + 2]);
  }
}

TEST_CASE("ppm header and payload size") {
  Fixture f;
  const auto dir = temp_dir("ppm_out");
  TensorF map = TensorF::filled({1, 1, 32, 32}, 0.5f);
  // write a 64x64 by upsampling the sample? header check uses 32x32 grid
  OverlayImage img = render_overlay(f.sample, map, -1.f, "m");
  const std::string path = (dir / "m.ppm").string();
  write_ppm(img, path);
  std::ifstream is(path, std::ios::binary);
  std::string header;
  std::getline(is, header);
  CHECK(header == "P6");
  std::getline(is, header);
  CHECK(header == "32 32");
  std::getline(is, header);
  CHECK(header == "255");
  is.seekg(0, std::ios::end);
  CHECK(static_cast<size_t>(is.tellg()) == std::string("P6\n32 32\n255\n").size() +
                                               32 * 32 * 3);
}

TEST_CASE("blend weights match the scalar oracle at sample pixels") {
  Fixture f;
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  TensorF map = TensorF::zeros({1, 1, 32, 32});
  for (auto& v : map.data()) v = u(rng);
  OverlayImage img = render_overlay(f.sample, map, -1.f, "m");

  float mn = f.sample.image.raw()[0], mx = mn;
  for (float v : f.sample.image.data()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  for (int trial = 0; trial < 5; ++trial) {
    const int64_t i = static_cast<int64_t>(rng() % (32 * 32));
    const float gray = (f.sample.image.raw()[i] - mn) / (mx - mn);
    const float v = map.data()[i];
    const float a = 0.6f * v;
    const float heat_r = std::clamp(3.f * v, 0.f, 1.f);
    const uint8_t expect_r =
        static_cast<uint8_t>(std::lround(255.f * ((1.f - a) * gray + a * heat_r)));
    CHECK(img.rgb[static_cast<size_t>(3 * i)] == expect_r);
  }
}

TEST_CASE("smoothgrad n=1 sigma=0 equals the plain input gradient") {
  Fixture f;
  TensorF sal = smoothgrad(f.model, f.sample, 1, 1, 0.f, 5);

  // plain input-gradient saliency computed directly
  const int h = 32, w = 32;
  TensorF x = TensorF::from_data(
      {1, 1, h, w},
      std::vector<float>(f.sample.image.data().begin(), f.sample.image.data().end()));
  x.set_requires_grad(true);
  TensorF canny = TensorF::zeros({1, 1, h, w});
  for (size_t i = 0; i < f.sample.canny_edges.v.size(); ++i)
    canny.raw()[i] = static_cast<float>(f.sample.canny_edges.v[i]);
  TapeF tape;
  auto out = f.model.forward(x, canny, false, &tape);
  const int k = f.model.config().num_classes;
  TensorF mask = TensorF::zeros({1, k, h, w});
  for (int64_t p = 0; p < h * w; ++p) mask.raw()[1 * h * w + p] = 1.f;
  backward(sum_all(&tape, mul(&tape, out.seg_logits, mask)), tape);

  float gmn = std::abs(x.grad()[0]), gmx = gmn;
  for (auto g : x.grad()) {
    gmn = std::min(gmn, std::abs(g));
    gmx = std::max(gmx, std::abs(g));
  }
  for (int64_t i = 0; i < h * w; ++i) {
    const float expect = (std::abs(x.grad()[static_cast<size_t>(i)]) - gmn) / (gmx - gmn);
    CHECK(sal.data()[i] == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("smoothgrad output is normalized to [0,1] with max 1") {
  Fixture f;
  TensorF sal = smoothgrad(f.model, f.sample, 2, 3, 0.1f, 7);
  float mx = 0.f;
  for (float v : sal.data()) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
    mx = std::max(mx, v);
  }
  CHECK(mx == doctest::Approx(1.f));
  CHECK_THROWS_AS(static_cast<void>(smoothgrad(f.model, f.sample, 1, 0)), Error);
}

TEST_CASE("explain_sample writes the documented tree and leaves the model unchanged") {
  Fixture f;
  const auto out = temp_dir("explain_out");
  const uint64_t before = registry_checksum(f.model.registry());
  ExplainStats stats = explain_sample(f.model, f.sample, out.string(), {0.6f, 0.8f}, 2);
  CHECK(registry_checksum(f.model.registry()) == before);

  const fs::path dir = out / f.sample.id;
  // 7 maps (ppm + sgt) + 4 thresholded variants
  for (const char* name : {"alpha_1", "alpha_2", "alpha_3", "spatial_d2", "spatial_d3",
                           "shape", "smoothgrad"}) {
    CHECK(fs::exists(dir / (std::string(name) + ".ppm")));
    CHECK(fs::exists(dir / (std::string(name) + ".sgt")));
  }
  for (const char* name : {"spatial_d2_t060", "spatial_d2_t080", "spatial_d3_t060",
                           "spatial_d3_t080"}) {
    CHECK(fs::exists(dir / (std::string(name) + ".ppm")));
  }
  CHECK(stats.files_written == 7 * 2 + 4);
  CHECK(stats.smoothgrad_passes == 2);

  // a single threshold emits only its own variants
  const auto out2 = temp_dir("explain_out2");
  explain_sample(f.model, f.sample, out2.string(), {0.8f}, 0);
  const fs::path dir2 = out2 / f.sample.id;
  CHECK(fs::exists(dir2 / "spatial_d2_t080.ppm"));
  CHECK_FALSE(fs::exists(dir2 / "spatial_d2_t060.ppm"));
  CHECK_FALSE(fs::exists(dir2 / "smoothgrad.ppm"));
}
