#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "saunet/grid.hpp"
#include "saunet/tensor.hpp"

namespace saunet {

/// One prepared 2D slice: z-scored image plus aligned label, boundary and
/// canny grids.
struct SegSample {
  Tensor<float> image;  // [1,H,W]
  IntMap labels;
  Mask boundary;
  Mask canny_edges;
  std::pair<float, float> spacing{1.25f, 1.25f};
  std::string id;
};

struct ManifestRow {
  std::string id, image_file, label_file, split;
};

/// Dataset root layout: images/*.sgt, labels/*.sgt, manifest.tsv (header
/// `id image label split`) plus meta.json carrying class count, seed and
/// pixel spacing.
struct DatasetManifest {
  std::string root;
  std::vector<ManifestRow> rows;
  int num_classes = 0;
  uint64_t seed = 0;
  std::pair<float, float> spacing{1.25f, 1.25f};

  std::vector<const ManifestRow*> split_rows(const std::string& split) const;
  const ManifestRow& find(const std::string& id) const;
};

DatasetManifest manifest_read(const std::string& root);
void manifest_write(const DatasetManifest& m);

/// Deterministic shuffled train/val assignment with disjoint ids.
void split_dataset(DatasetManifest& m, double train_fraction, uint64_t seed);

// ---- preprocessing ----------------------------------------------------------

/// Rescales to the target mm spacing: bilinear for the image, nearest for
/// labels; new dims = round(old * spacing / target).
void resample_to_spacing(FloatMap& image, IntMap& labels,
                         std::pair<float, float>& spacing,
                         std::pair<float, float> target = {1.25f, 1.25f});

/// Subtracts the per-slice minimum, then symmetric center crop/pad to the
/// requested dims (image padded with 0, labels with background).
void center_crop_pad(FloatMap& image, IntMap& labels, int out_h, int out_w);

/// In-place z-score; returns false (and zero-fills) for a constant slice.
bool zscore(FloatMap& image);

// ---- augmentation -----------------------------------------------------------

struct AugmentParams {
  float angle = 0.f;  // radians
  bool flip_h = false;
  bool flip_v = false;
  float elastic_alpha = 0.f;  // peak displacement, px
  float elastic_sigma = 8.f;  // smoothing, px
  uint64_t elastic_seed = 0;
  float gamma = 1.f;
};

/// Rotation uniform in [-pi,pi], 50% flips, elastic deformation, gamma from
/// [0.5, 2.0]; all driven by the passed engine.
AugmentParams draw_augment_params(std::mt19937_64& rng);

/// Applies the identical geometric transform to image (bilinear) and labels
/// (nearest), then gamma on min-max rescaled intensities. Out-of-bounds
/// samples fill with 0 / background.
void apply_augment(FloatMap& image, IntMap& labels, const AugmentParams& p);

// ---- sample loading ---------------------------------------------------------

struct PipelineOptions {
  int crop = 64;
  std::pair<float, float> target_spacing{1.25f, 1.25f};
  int boundary_dilation = 1;
  bool augment = false;
};

/// Full chain: read SGT files, resample, crop/pad, optional augmentation,
/// z-score, boundary derivation, canny. aug_seed fully determines the
/// augmentation draw.
SegSample load_sample(const DatasetManifest& m, const ManifestRow& row,
                      const PipelineOptions& opt, uint64_t aug_seed);

}  // namespace saunet
