#include "saunet/interpret.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "saunet/losses.hpp"
#include "saunet/ops.hpp"
#include "saunet/sgt.hpp"

namespace saunet {

namespace fs = std::filesystem;

void write_ppm(const OverlayImage& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("cannot open '", path, "' for writing");
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.rgb.data()),
           static_cast<std::streamsize>(img.rgb.size()));
  if (!os) fail("write failed for '", path, "'");
}

AttentionBundle<float> extract(const ModelF& model, const SegSample& sample) {
  const int h = sample.labels.h, w = sample.labels.w;
  Tensor<float> x = Tensor<float>::from_data(
      {1, 1, h, w}, std::vector<float>(sample.image.data().begin(),
                                       sample.image.data().end()));
  Tensor<float> canny = Tensor<float>::zeros({1, 1, h, w});
  for (size_t i = 0; i < sample.canny_edges.v.size(); ++i)
    canny.raw()[i] = static_cast<float>(sample.canny_edges.v[i]);
  auto out = model.forward(x, canny, false, nullptr);
  return out.attn;
}

Mask threshold_map(const Tensor<float>& map, float tau) {
  if (tau < 0.f || tau > 1.f) fail("threshold_map: tau must be in [0,1], got ", tau);
  if (map.ndim() < 2) fail("threshold_map: expected at least 2 dims");
  const int h = map.dim(map.ndim() - 2);
  const int w = map.dim(map.ndim() - 1);
  if (map.numel() != static_cast<int64_t>(h) * w)
    fail("threshold_map: expected a single-channel map, got ", shape_str(map.shape()));
  Mask out(h, w);
  for (int64_t i = 0; i < map.numel(); ++i)
    out.v[static_cast<size_t>(i)] = map.raw()[i] >= tau ? 1 : 0;
  return out;
}

namespace {

// Simple hot palette: black -> red -> yellow -> white.
inline void heat_rgb(float v, float& r, float& g, float& b) {
  r = std::clamp(3.f * v, 0.f, 1.f);
  g = std::clamp(3.f * v - 1.f, 0.f, 1.f);
  b = std::clamp(3.f * v - 2.f, 0.f, 1.f);
}

constexpr float kBlendStrength = 0.6f;

}  // namespace

OverlayImage render_overlay(const SegSample& sample, const Tensor<float>& map,
                            float tau, const std::string& map_name) {
  const int h = sample.labels.h, w = sample.labels.w;
  // resample the map to image dims when coarser
  Tensor<float> m = map;
  const int mh = m.dim(m.ndim() - 2), mw = m.dim(m.ndim() - 1);
  if (mh != h || mw != w) {
    Tensor<float> m4 = Tensor<float>::from_data(
        {1, 1, mh, mw}, std::vector<float>(m.data().begin(), m.data().end()));
    m = bilinear_upsample<float>(nullptr, m4, h, w);
  }

  // grayscale base from the min-max normalized image
  float mn = sample.image.raw()[0], mx = sample.image.raw()[0];
  for (float v : sample.image.data()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const float range = mx > mn ? mx - mn : 1.f;

  OverlayImage img;
  img.width = w;
  img.height = h;
  img.sample_id = sample.id;
  img.map_name = map_name;
  img.threshold = tau;
  img.rgb.resize(static_cast<size_t>(h) * w * 3);
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    const float gray = (sample.image.raw()[i] - mn) / range;
    const float v = std::clamp(m.raw()[i], 0.f, 1.f);
    const float a = tau >= 0.f ? (v >= tau ? kBlendStrength : 0.f) : kBlendStrength * v;
    float r, g, b;
    heat_rgb(v, r, g, b);
    const float ro = (1.f - a) * gray + a * r;
    const float go = (1.f - a) * gray + a * g;
    const float bo = (1.f - a) * gray + a * b;
    img.rgb[static_cast<size_t>(3 * i) + 0] = static_cast<uint8_t>(std::lround(255.f * ro));
    img.rgb[static_cast<size_t>(3 * i) + 1] = static_cast<uint8_t>(std::lround(255.f * go));
    img.rgb[static_cast<size_t>(3 * i) + 2] = static_cast<uint8_t>(std::lround(255.f * bo));
  }
  return img;
}

Tensor<float> smoothgrad(const ModelF& model, const SegSample& sample, int cls, int n,
                         float sigma_scale, uint64_t seed) {
  if (n < 1) fail("smoothgrad: n must be >= 1");
  if (cls < 0 || cls >= model.config().num_classes)
    fail("smoothgrad: class ", cls, " out of range");
  const int h = sample.labels.h, w = sample.labels.w;
  const int64_t hw = static_cast<int64_t>(h) * w;

  float mn = sample.image.raw()[0], mx = sample.image.raw()[0];
  for (float v : sample.image.data()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const float sigma = sigma_scale * (mx - mn);

  Tensor<float> canny = Tensor<float>::zeros({1, 1, h, w});
  for (size_t i = 0; i < sample.canny_edges.v.size(); ++i)
    canny.raw()[i] = static_cast<float>(sample.canny_edges.v[i]);

  // channel mask selecting the class logits
  const int k = model.config().num_classes;
  Tensor<float> mask = Tensor<float>::zeros({1, k, h, w});
  for (int64_t p = 0; p < hw; ++p) mask.raw()[static_cast<int64_t>(cls) * hw + p] = 1.f;

  std::mt19937_64 rng(mix_seed(seed, 0x5af3));
  std::normal_distribution<float> noise(0.f, 1.f);
  std::vector<double> acc(static_cast<size_t>(hw), 0.0);
  for (int pass = 0; pass < n; ++pass) {
    Tensor<float> x = Tensor<float>::zeros({1, 1, h, w}, true);
    for (int64_t i = 0; i < hw; ++i)
      x.raw()[i] = sample.image.raw()[i] + (sigma > 0.f ? sigma * noise(rng) : 0.f);
    Tape<float> tape;
    auto out = model.forward(x, canny, false, &tape);
    Tensor<float> score = sum_all(&tape, mul(&tape, out.seg_logits, mask));
    backward(score, tape);
    for (int64_t i = 0; i < hw; ++i)
      acc[static_cast<size_t>(i)] += std::abs(x.grad()[static_cast<size_t>(i)]);
    tape.clear();
  }

  Tensor<float> sal = Tensor<float>::zeros({1, 1, h, w});
  double smn = acc[0], smx = acc[0];
  for (double v : acc) {
    smn = std::min(smn, v);
    smx = std::max(smx, v);
  }
  const double range = smx > smn ? smx - smn : 1.0;
  for (int64_t i = 0; i < hw; ++i)
    sal.raw()[i] = static_cast<float>((acc[static_cast<size_t>(i)] - smn) / range);
  return sal;
}

namespace {

std::string threshold_suffix(float tau) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_t%03d", static_cast<int>(std::lround(tau * 100.f)));
  return buf;
}

}  // namespace

ExplainStats explain_sample(const ModelF& model, const SegSample& sample,
                            const std::string& out_root,
                            const std::vector<float>& thresholds, int smoothgrad_n,
                            int smoothgrad_class, uint64_t seed) {
  const fs::path dir = fs::path(out_root) / sample.id;
  fs::create_directories(dir);
  ExplainStats stats;

  const auto t0 = std::chrono::steady_clock::now();
  AttentionBundle<float> bundle = extract(model, sample);
  stats.extract_seconds = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t0)
                              .count();

  std::vector<std::pair<std::string, Tensor<float>>> maps;
  for (size_t i = 0; i < bundle.alphas.size(); ++i)
    maps.push_back({"alpha_" + std::to_string(i + 1), bundle.alphas[i]});
  // Decoder numbering counts from the finest block: d2 = second finest,
  // d3 = third finest. spatial_maps is ordered coarse -> fine.
  const size_t n_spatial = bundle.spatial_maps.size();
  if (n_spatial >= 3) {
    maps.push_back({"spatial_d2", bundle.spatial_maps[n_spatial - 2]});
    maps.push_back({"spatial_d3", bundle.spatial_maps[n_spatial - 3]});
  }
  if (bundle.shape_map.defined()) maps.push_back({"shape", bundle.shape_map});

  for (const auto& [name, map] : maps) {
    write_ppm(render_overlay(sample, map, -1.f, name), (dir / (name + ".ppm")).string());
    sgt_write((dir / (name + ".sgt")).string(), map);
    stats.files_written += 2;
    if (name == "spatial_d2" || name == "spatial_d3") {
      for (float tau : thresholds) {
        const std::string tname = name + threshold_suffix(tau);
        write_ppm(render_overlay(sample, map, tau, tname),
                  (dir / (tname + ".ppm")).string());
        ++stats.files_written;
      }
    }
  }

  if (smoothgrad_n > 0) {
    const auto s0 = std::chrono::steady_clock::now();
    Tensor<float> sal =
        smoothgrad(model, sample, smoothgrad_class, smoothgrad_n, 0.1f, seed);
    stats.smoothgrad_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count();
    stats.smoothgrad_passes = smoothgrad_n;
    write_ppm(render_overlay(sample, sal, -1.f, "smoothgrad"),
              (dir / "smoothgrad.ppm").string());
    sgt_write((dir / "smoothgrad.sgt").string(), sal);
    stats.files_written += 2;
  }
  return stats;
}

}  // namespace saunet
