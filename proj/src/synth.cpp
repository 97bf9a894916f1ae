#include "saunet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "saunet/sgt.hpp"

namespace saunet {

namespace fs = std::filesystem;

namespace {

struct Geometry {
  float cx, cy;      // disc center
  float r1;          // disc radius
  float r2;          // annulus outer radius
  float rv_cx, rv_cy, rv_r;   // crescent host disc
  float bite_cx, bite_cy, bite_r;  // subtracted disc forming the crescent
};

Geometry draw_geometry(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u01(0.f, 1.f);
  Geometry g;
  const float s = static_cast<float>(size);
  g.cx = s * (0.46f + 0.12f * u01(rng));
  g.cy = s * (0.46f + 0.12f * u01(rng));
  g.r1 = s * (0.12f + 0.05f * u01(rng));
  g.r2 = g.r1 + s * (0.07f + 0.03f * u01(rng));
  const float theta = 6.2831853f * u01(rng);
  g.rv_r = s * (0.13f + 0.05f * u01(rng));
  const float dist = g.r2 + g.rv_r * (0.3f + 0.2f * u01(rng));
  g.rv_cx = g.cx + dist * std::cos(theta);
  g.rv_cy = g.cy + dist * std::sin(theta);
  // the bite comes from the annulus side, which bends the disc into a crescent
  const float bite_off = g.rv_r * (0.55f + 0.2f * u01(rng));
  g.bite_cx = g.rv_cx - bite_off * std::cos(theta);
  g.bite_cy = g.rv_cy - bite_off * std::sin(theta);
  g.bite_r = g.rv_r * (0.7f + 0.15f * u01(rng));
  return g;
}

void rasterize(const Geometry& g, IntMap& labels) {
  auto inside = [](float px, float py, float cx, float cy, float r) {
    const float dx = px - cx, dy = py - cy;
    return dx * dx + dy * dy <= r * r;
  };
  for (int y = 0; y < labels.h; ++y)
    for (int x = 0; x < labels.w; ++x) {
      const float px = static_cast<float>(x), py = static_cast<float>(y);
      int32_t cls = 0;
      const float dx = px - g.cx, dy = py - g.cy;
      const float d2 = dx * dx + dy * dy;
      if (inside(px, py, g.rv_cx, g.rv_cy, g.rv_r) &&
          !inside(px, py, g.bite_cx, g.bite_cy, g.bite_r) && d2 > g.r2 * g.r2)
        cls = 3;  // crescent
      if (d2 <= g.r2 * g.r2 && d2 > g.r1 * g.r1) cls = 2;  // annulus
      if (d2 <= g.r1 * g.r1) cls = 1;                      // disc
      labels.at(y, x) = cls;
    }
}

bool all_classes_present(const IntMap& labels, int k, int min_pixels) {
  std::vector<int> hist(static_cast<size_t>(k), 0);
  for (int32_t v : labels.v) ++hist[static_cast<size_t>(v)];
  for (int c = 0; c < k; ++c)
    if (hist[static_cast<size_t>(c)] < min_pixels) return false;
  return true;
}

void texture_image(const IntMap& labels, const std::string& family, float noise,
                   std::mt19937_64& rng, FloatMap& image) {
  const float base[4] = {0.20f, 0.80f, 0.52f, 0.52f};
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  std::uniform_real_distribution<float> u01(0.f, 1.f);
  if (family == "speckle") {
    for (int y = 0; y < labels.h; ++y)
      for (int x = 0; x < labels.w; ++x) {
        const int32_t c = labels.at(y, x);
        image.at(y, x) = std::clamp(base[c] + noise * u(rng), 0.f, 1.f);
      }
  } else if (family == "stripes") {
    // per-class gratings; wavelengths long enough that the strongest
    // gradients stay on the structure boundaries rather than the texture
    float phi[4], lambda[4], phase[4];
    for (int c = 0; c < 4; ++c) {
      phi[c] = 3.14159265f * u01(rng);
      lambda[c] = 8.f + 8.f * u01(rng);
      phase[c] = 6.2831853f * u01(rng);
    }
    for (int y = 0; y < labels.h; ++y)
      for (int x = 0; x < labels.w; ++x) {
        const int32_t c = labels.at(y, x);
        const float proj = x * std::cos(phi[c]) + y * std::sin(phi[c]);
        const float wave = std::sin(6.2831853f * proj / lambda[c] + phase[c]);
        image.at(y, x) =
            std::clamp(base[c] + 0.10f * wave + 0.5f * noise * u(rng), 0.f, 1.f);
      }
  } else {
    fail("unknown texture family '", family, "' (expected speckle or stripes)");
  }
}

}  // namespace

void synth_sample(int index, const SynthOptions& opt, FloatMap& image, IntMap& labels) {
  labels = IntMap(opt.size, opt.size);
  image = FloatMap(opt.size, opt.size);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::mt19937_64 rng(mix_seed(opt.seed, static_cast<uint64_t>(index) * 64 + attempt));
    const Geometry g = draw_geometry(opt.size, rng);
    rasterize(g, labels);
    if (!all_classes_present(labels, opt.num_classes, 8)) continue;
    texture_image(labels, opt.texture, opt.noise, rng, image);
    return;
  }
  fail("synthetic generator failed to place all structures for sample ", index);
}

uint64_t synth_generate(const std::string& out_dir, const SynthOptions& opt) {
  if (opt.num_classes != 4) fail("synthetic generator emits exactly 4 classes");
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");

  DatasetManifest m;
  m.root = out_dir;
  m.num_classes = opt.num_classes;
  m.seed = opt.seed;
  m.spacing = {1.25f, 1.25f};

  uint64_t checksum = 0xcbf29ce484222325ULL;
  for (int i = 0; i < opt.n; ++i) {
    FloatMap image;
    IntMap labels;
    synth_sample(i, opt, image, labels);

    char id[32];
    std::snprintf(id, sizeof(id), "s%04d", i);
    ManifestRow row;
    row.id = id;
    row.image_file = std::string("images/") + id + ".sgt";
    row.label_file = std::string("labels/") + id + ".sgt";
    row.split = "train";
    m.rows.push_back(row);

    std::vector<float> img_data(image.v.begin(), image.v.end());
    Tensor<float> img_t =
        Tensor<float>::from_data({1, opt.size, opt.size}, std::move(img_data));
    std::vector<float> lab_data(labels.v.size());
    for (size_t p = 0; p < labels.v.size(); ++p)
      lab_data[p] = static_cast<float>(labels.v[p]);
    Tensor<float> lab_t =
        Tensor<float>::from_data({1, opt.size, opt.size}, std::move(lab_data));
    sgt_write((fs::path(out_dir) / row.image_file).string(), img_t);
    sgt_write((fs::path(out_dir) / row.label_file).string(), lab_t);

    checksum = fnv1a(img_t.raw(), static_cast<size_t>(img_t.numel()) * 4, checksum);
    checksum = fnv1a(lab_t.raw(), static_cast<size_t>(lab_t.numel()) * 4, checksum);
  }
  if (opt.n > 0) split_dataset(m, opt.train_fraction, opt.seed);
  manifest_write(m);
  return checksum;
}

}  // namespace saunet
