#include "saunet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "saunet/canny.hpp"
#include "saunet/sgt.hpp"

namespace saunet {

namespace fs = std::filesystem;

std::vector<const ManifestRow*> DatasetManifest::split_rows(const std::string& split) const {
  std::vector<const ManifestRow*> out;
  for (const auto& r : rows)
    if (r.split == split) out.push_back(&r);
  return out;
}

const ManifestRow& DatasetManifest::find(const std::string& id) const {
  for (const auto& r : rows)
    if (r.id == id) return r;
  fail("unknown sample id '", id, "' in dataset '", root, "'");
}

DatasetManifest manifest_read(const std::string& root) {
  DatasetManifest m;
  m.root = root;
  const fs::path tsv = fs::path(root) / "manifest.tsv";
  std::ifstream is(tsv);
  if (!is) fail("cannot open manifest '", tsv.string(), "'");
  std::string line;
  if (!std::getline(is, line)) fail("empty manifest '", tsv.string(), "'");
  if (line != "id\timage\tlabel\tsplit")
    fail("manifest '", tsv.string(), "' has unexpected header '", line, "'");
  std::vector<std::string> seen;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestRow r;
    if (!std::getline(ls, r.id, '\t') || !std::getline(ls, r.image_file, '\t') ||
        !std::getline(ls, r.label_file, '\t') || !std::getline(ls, r.split, '\t'))
      fail("malformed manifest row '", line, "'");
    if (r.split != "train" && r.split != "val" && r.split != "test")
      fail("manifest row '", r.id, "' has unknown split '", r.split, "'");
    for (const auto& s : seen)
      if (s == r.id) fail("duplicate id '", r.id, "' in manifest");
    seen.push_back(r.id);
    for (const auto* f : {&r.image_file, &r.label_file})
      if (!fs::exists(fs::path(root) / *f))
        fail("manifest references missing file '", *f, "' under '", root, "'");
    m.rows.push_back(std::move(r));
  }

  const fs::path meta = fs::path(root) / "meta.json";
  if (fs::exists(meta)) {
    std::ifstream ms(meta);
    nlohmann::json j;
    try {
      ms >> j;
    } catch (const std::exception& e) {
      fail("invalid meta.json in '", root, "': ", e.what());
    }
    m.num_classes = j.value("num_classes", 0);
    m.seed = j.value("seed", static_cast<uint64_t>(0));
    if (j.contains("spacing")) {
      m.spacing.first = j["spacing"][0].get<float>();
      m.spacing.second = j["spacing"][1].get<float>();
    }
  }
  if (m.num_classes == 0) {
    // No meta file: infer the class count from the label files.
    int max_label = 0;
    for (const auto& r : m.rows) {
      Tensor<float> lab = sgt_read((fs::path(root) / r.label_file).string());
      for (float v : lab.data()) max_label = std::max(max_label, static_cast<int>(v));
    }
    m.num_classes = max_label + 1;
  }
  return m;
}

void manifest_write(const DatasetManifest& m) {
  fs::create_directories(m.root);
  const fs::path tsv = fs::path(m.root) / "manifest.tsv";
  std::ofstream os(tsv, std::ios::trunc);
  if (!os) fail("cannot write manifest '", tsv.string(), "'");
  os << "id\timage\tlabel\tsplit\n";
  for (const auto& r : m.rows)
    os << r.id << '\t' << r.image_file << '\t' << r.label_file << '\t' << r.split << '\n';

  nlohmann::json j;
  j["num_classes"] = m.num_classes;
  j["seed"] = m.seed;
  j["spacing"] = {m.spacing.first, m.spacing.second};
  std::ofstream ms(fs::path(m.root) / "meta.json", std::ios::trunc);
  ms << j.dump(2) << "\n";
}

void split_dataset(DatasetManifest& m, double train_fraction, uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    fail("split: train fraction must be in (0,1), got ", train_fraction);
  std::vector<size_t> order(m.rows.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const size_t n_train = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(order.size())));
  for (size_t k = 0; k < order.size(); ++k)
    m.rows[order[k]].split = k < n_train ? "train" : "val";
}

// ---- preprocessing ----------------------------------------------------------

void resample_to_spacing(FloatMap& image, IntMap& labels,
                         std::pair<float, float>& spacing,
                         std::pair<float, float> target) {
  if (spacing.first <= 0.f || spacing.second <= 0.f)
    fail("resample: spacing must be positive");
  const int new_h =
      std::max(1, static_cast<int>(std::lround(image.h * spacing.first / target.first)));
  const int new_w = std::max(
      1, static_cast<int>(std::lround(image.w * spacing.second / target.second)));
  if (new_h == image.h && new_w == image.w) {
    spacing = target;
    return;
  }

  FloatMap img_out(new_h, new_w);
  IntMap lab_out(new_h, new_w);
  const float sy = new_h > 1 ? static_cast<float>(image.h - 1) / (new_h - 1) : 0.f;
  const float sx = new_w > 1 ? static_cast<float>(image.w - 1) / (new_w - 1) : 0.f;
  for (int y = 0; y < new_h; ++y)
    for (int x = 0; x < new_w; ++x) {
      const float fy = y * sy, fx = x * sx;
      const int y0 = std::min(static_cast<int>(fy), image.h - 1);
      const int x0 = std::min(static_cast<int>(fx), image.w - 1);
      const int y1 = std::min(y0 + 1, image.h - 1);
      const int x1 = std::min(x0 + 1, image.w - 1);
      const float wy = fy - y0, wx = fx - x0;
      img_out.at(y, x) = (1 - wy) * ((1 - wx) * image.at(y0, x0) + wx * image.at(y0, x1)) +
                         wy * ((1 - wx) * image.at(y1, x0) + wx * image.at(y1, x1));
      lab_out.at(y, x) = labels.at(static_cast<int>(std::lround(fy)),
                                   static_cast<int>(std::lround(fx)));
    }
  image = std::move(img_out);
  labels = std::move(lab_out);
  spacing = target;
}

void center_crop_pad(FloatMap& image, IntMap& labels, int out_h, int out_w) {
  if (!image.v.empty()) {
    float mn = image.v[0];
    for (float v : image.v) mn = std::min(mn, v);
    for (float& v : image.v) v -= mn;  // slice minimum becomes 0 before padding
  }
  FloatMap img_out(out_h, out_w, 0.f);
  IntMap lab_out(out_h, out_w, 0);
  const int off_y = (image.h - out_h) / 2;
  const int off_x = (image.w - out_w) / 2;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const int sy = y + off_y, sx = x + off_x;
      if (sy < 0 || sy >= image.h || sx < 0 || sx >= image.w) continue;
      img_out.at(y, x) = image.at(sy, sx);
      lab_out.at(y, x) = labels.at(sy, sx);
    }
  image = std::move(img_out);
  labels = std::move(lab_out);
}

bool zscore(FloatMap& image) {
  const size_t n = image.v.size();
  if (n == 0) return false;
  double mean = 0.0;
  for (float v : image.v) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : image.v) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (sd <= 0.0) {
    std::fill(image.v.begin(), image.v.end(), 0.f);
    return false;
  }
  for (float& v : image.v)
    v = static_cast<float>((v - mean) / sd);
  return true;
}

// ---- augmentation -----------------------------------------------------------

AugmentParams draw_augment_params(std::mt19937_64& rng) {
  AugmentParams p;
  std::uniform_real_distribution<float> angle(-3.14159265358979f, 3.14159265358979f);
  std::uniform_real_distribution<float> gamma(0.5f, 2.0f);
  std::uniform_int_distribution<int> coin(0, 1);
  p.angle = angle(rng);
  p.flip_h = coin(rng) == 1;
  p.flip_v = coin(rng) == 1;
  p.elastic_alpha = 10.f;
  p.elastic_sigma = 8.f;
  p.elastic_seed = rng();
  p.gamma = gamma(rng);
  return p;
}

namespace {

// Shared rotation resampler: one inverse mapping applied with bilinear
// interpolation for intensities and nearest-neighbour for labels.
void rotate_maps(FloatMap& image, IntMap& labels, float angle) {
  if (angle == 0.f) return;
  const int h = image.h, w = image.w;
  const float cy = (h - 1) / 2.f, cx = (w - 1) / 2.f;
  const float c = std::cos(angle), s = std::sin(angle);
  FloatMap img_out(h, w, 0.f);
  IntMap lab_out(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // inverse rotation of the output coordinate
      const float dy = y - cy, dx = x - cx;
      const float sy = cy + (c * dy + s * dx);
      const float sx = cx + (-s * dy + c * dx);
      const int ny = static_cast<int>(std::lround(sy));
      const int nx = static_cast<int>(std::lround(sx));
      if (ny >= 0 && ny < h && nx >= 0 && nx < w) lab_out.at(y, x) = labels.at(ny, nx);
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      if (y0 < -1 || y0 > h - 1 || x0 < -1 || x0 > w - 1) continue;
      const float wy = sy - y0, wx = sx - x0;
      auto sample = [&](int yy, int xx) -> float {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.f;
        return image.at(yy, xx);
      };
      img_out.at(y, x) = (1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                         wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
    }
  image = std::move(img_out);
  labels = std::move(lab_out);
}

void flip_maps(FloatMap& image, IntMap& labels, bool flip_h, bool flip_v) {
  const int h = image.h, w = image.w;
  if (flip_h) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x) {
        std::swap(image.at(y, x), image.at(y, w - 1 - x));
        std::swap(labels.at(y, x), labels.at(y, w - 1 - x));
      }
  }
  if (flip_v) {
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w; ++x) {
        std::swap(image.at(y, x), image.at(h - 1 - y, x));
        std::swap(labels.at(y, x), labels.at(h - 1 - y, x));
      }
  }
}

void elastic_warp(FloatMap& image, IntMap& labels, float alpha, float sigma,
                  uint64_t seed) {
  if (alpha == 0.f) return;
  const int h = image.h, w = image.w;
  FloatMap dx(h, w), dy(h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : dx.v) v = u(rng);
  for (auto& v : dy.v) v = u(rng);

  // Smooth, then scale so the largest displacement magnitude equals alpha.
  const float blur_sigma = sigma;
  auto smooth = [&](FloatMap& m) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.0f * blur_sigma)));
    std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
    float norm = 0.f;
    for (int i = -radius; i <= radius; ++i) {
      const float v = std::exp(-static_cast<float>(i * i) / (2.f * blur_sigma * blur_sigma));
      kernel[static_cast<size_t>(i + radius)] = v;
      norm += v;
    }
    for (float& v : kernel) v /= norm;
    FloatMap tmp(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::min(std::max(x + i, 0), w - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * m.at(y, xx);
        }
        tmp.at(y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.f;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::min(std::max(y + i, 0), h - 1);
          acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(yy, x);
        }
        m.at(y, x) = acc;
      }
  };
  smooth(dx);
  smooth(dy);
  float peak = 0.f;
  for (size_t i = 0; i < dx.v.size(); ++i)
    peak = std::max(peak, std::sqrt(dx.v[i] * dx.v[i] + dy.v[i] * dy.v[i]));
  if (peak > 0.f) {
    const float k = alpha / peak;
    for (auto& v : dx.v) v *= k;
    for (auto& v : dy.v) v *= k;
  }

  FloatMap img_out(h, w, 0.f);
  IntMap lab_out(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float sy = y + dy.at(y, x);
      const float sx = x + dx.at(y, x);
      const int ny = static_cast<int>(std::lround(sy));
      const int nx = static_cast<int>(std::lround(sx));
      if (ny >= 0 && ny < h && nx >= 0 && nx < w) lab_out.at(y, x) = labels.at(ny, nx);
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      if (y0 < -1 || y0 > h - 1 || x0 < -1 || x0 > w - 1) continue;
      const float wy = sy - y0, wx = sx - x0;
      auto sample = [&](int yy, int xx) -> float {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.f;
        return image.at(yy, xx);
      };
      img_out.at(y, x) = (1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                         wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
    }
  image = std::move(img_out);
  labels = std::move(lab_out);
}

void gamma_shift(FloatMap& image, float gamma) {
  if (gamma == 1.f || image.v.empty()) return;
  float mn = image.v[0], mx = image.v[0];
  for (float v : image.v) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (mx <= mn) return;
  const float range = mx - mn;
  for (float& v : image.v)
    v = mn + range * std::pow((v - mn) / range, gamma);
}

}  // namespace

void apply_augment(FloatMap& image, IntMap& labels, const AugmentParams& p) {
  if (image.h != labels.h || image.w != labels.w)
    fail("augment: image ", image.h, "x", image.w, " vs labels ", labels.h, "x",
         labels.w);
  rotate_maps(image, labels, p.angle);
  flip_maps(image, labels, p.flip_h, p.flip_v);
  elastic_warp(image, labels, p.elastic_alpha, p.elastic_sigma, p.elastic_seed);
  gamma_shift(image, p.gamma);
}

// ---- sample loading ---------------------------------------------------------

namespace {

FloatMap tensor_to_map(const Tensor<float>& t, const std::string& what) {
  int h, w;
  if (t.ndim() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.ndim() == 3 && t.dim(0) == 1) {
    h = t.dim(1);
    w = t.dim(2);
  } else {
    fail(what, ": expected [H,W] or [1,H,W], got ", shape_str(t.shape()));
  }
  FloatMap m(h, w);
  std::copy(t.data().begin(), t.data().end(), m.v.begin());
  return m;
}

}  // namespace

SegSample load_sample(const DatasetManifest& m, const ManifestRow& row,
                      const PipelineOptions& opt, uint64_t aug_seed) {
  namespace fs = std::filesystem;
  FloatMap image =
      tensor_to_map(sgt_read((fs::path(m.root) / row.image_file).string()), "image");
  FloatMap raw_labels =
      tensor_to_map(sgt_read((fs::path(m.root) / row.label_file).string()), "labels");
  if (image.h != raw_labels.h || image.w != raw_labels.w)
    fail("sample '", row.id, "': image ", image.h, "x", image.w, " vs labels ",
         raw_labels.h, "x", raw_labels.w);

  IntMap labels(raw_labels.h, raw_labels.w);
  for (size_t i = 0; i < raw_labels.v.size(); ++i) {
    const float v = raw_labels.v[i];
    const int32_t iv = static_cast<int32_t>(std::lround(v));
    if (std::abs(v - iv) > 1e-4f || iv < 0 || iv >= m.num_classes)
      fail("sample '", row.id, "': label value ", v, " outside [0,", m.num_classes, ")");
    labels.v[i] = iv;
  }

  std::pair<float, float> spacing = m.spacing;
  resample_to_spacing(image, labels, spacing, opt.target_spacing);
  center_crop_pad(image, labels, opt.crop, opt.crop);
  if (opt.augment) {
    std::mt19937_64 rng(aug_seed);
    apply_augment(image, labels, draw_augment_params(rng));
  }
  if (!zscore(image))
    std::cerr << "warning: sample '" << row.id << "' is constant; z-score skipped\n";

  SegSample s;
  s.id = row.id;
  s.spacing = spacing;
  s.labels = labels;
  s.boundary = mask_to_boundary(labels, opt.boundary_dilation);
  s.canny_edges = canny(image);
  std::vector<float> data(image.v.begin(), image.v.end());
  s.image = Tensor<float>::from_data({1, image.h, image.w}, std::move(data));
  return s;
}

}  // namespace saunet
