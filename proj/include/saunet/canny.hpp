#pragma once

#include "saunet/grid.hpp"

namespace saunet {

/// Classical edge map: Gaussian blur, Sobel gradients, non-maximum
/// suppression, double-threshold hysteresis. Thresholds are fractions of the
/// maximum gradient magnitude, so the result is invariant to intensity scale.
Mask canny(const FloatMap& image, float sigma = 1.0f, float lo_ratio = 0.1f,
           float hi_ratio = 0.2f);

}  // namespace saunet
