#pragma once

#include <string>
#include <vector>

#include "saunet/data.hpp"
#include "saunet/model.hpp"

namespace saunet {

/// RGB8 rendering of an attention map blended over the source image.
struct OverlayImage {
  int width = 0, height = 0;
  std::vector<uint8_t> rgb;
  std::string sample_id, map_name;
  float threshold = -1.f;  // < 0 means unthresholded
};

void write_ppm(const OverlayImage& img, const std::string& path);

/// One plain forward pass in eval mode; no gradients, no state mutation.
AttentionBundle<float> extract(const ModelF& model, const SegSample& sample);

/// Binary mask of map >= tau over the map's trailing H x W dims.
Mask threshold_map(const Tensor<float>& map, float tau);

/// Grayscale base + heat-palette alpha blend. With tau >= 0 only
/// suprathreshold pixels are blended. The map is bilinearly upsampled to the
/// image dims when coarser.
OverlayImage render_overlay(const SegSample& sample, const Tensor<float>& map,
                            float tau, const std::string& map_name);

/// Mean over n noisy input copies of |d sum(class-k logits) / d input|,
/// min-max normalized to [0,1]. Noise sigma = sigma_scale * input range.
Tensor<float> smoothgrad(const ModelF& model, const SegSample& sample, int cls, int n,
                         float sigma_scale = 0.1f, uint64_t seed = 0);

struct ExplainStats {
  int files_written = 0;
  double extract_seconds = 0;
  double smoothgrad_seconds = 0;
  int smoothgrad_passes = 0;
};

/// Writes the per-sample output tree: alpha_1..3, spatial_d2, spatial_d3 and
/// shape maps (PPM + raw SGT), thresholded spatial variants, and the
/// smoothgrad baseline when smoothgrad_n > 0.
ExplainStats explain_sample(const ModelF& model, const SegSample& sample,
                            const std::string& out_root,
                            const std::vector<float>& thresholds, int smoothgrad_n,
                            int smoothgrad_class = 3, uint64_t seed = 0);

}  // namespace saunet
