#pragma once

#include <cstdint>
#include <vector>

#include "saunet/common.hpp"

namespace saunet {

/// Integer label map, row-major h x w.
struct IntMap {
  int h = 0, w = 0;
  std::vector<int32_t> v;

  IntMap() = default;
  IntMap(int h_, int w_, int32_t fill = 0)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  bool same_dims(const IntMap& o) const { return h == o.h && w == o.w; }
};

/// Binary mask, row-major h x w, values 0/1.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int h_, int w_, uint8_t fill = 0)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }
};

/// Scalar image grid, row-major h x w.
struct FloatMap {
  int h = 0, w = 0;
  std::vector<float> v;

  FloatMap() = default;
  FloatMap(int h_, int w_, float fill = 0.f)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  float& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

/// Marks pixels where any 4-neighbour carries a different label, provided the
/// pixel or that neighbour is foreground (label != 0). dilate_radius 0 keeps
/// the raw boundary; 1 grows it by one 4-neighbourhood step.
Mask mask_to_boundary(const IntMap& labels, int dilate_radius = 0);

/// Chebyshev dilation by `radius` steps of the 8-neighbourhood.
Mask dilate_chebyshev(const Mask& m, int radius);

}  // namespace saunet
