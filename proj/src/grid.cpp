#include "saunet/grid.hpp"

namespace saunet {

Mask mask_to_boundary(const IntMap& labels, int dilate_radius) {
  Mask out(labels.h, labels.w);
  const int dy[4] = {-1, 1, 0, 0};
  const int dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < labels.h; ++y)
    for (int x = 0; x < labels.w; ++x) {
      const int32_t self = labels.at(y, x);
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= labels.h || nx < 0 || nx >= labels.w) continue;
        const int32_t nb = labels.at(ny, nx);
        if (nb != self && (self != 0 || nb != 0)) {
          out.at(y, x) = 1;
          break;
        }
      }
    }
  if (dilate_radius > 0) {
    // 4-neighbourhood growth, one step per radius unit
    for (int step = 0; step < dilate_radius; ++step) {
      Mask grown = out;
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
          if (out.at(y, x)) continue;
          for (int k = 0; k < 4; ++k) {
            const int ny = y + dy[k], nx = x + dx[k];
            if (ny < 0 || ny >= out.h || nx < 0 || nx >= out.w) continue;
            if (out.at(ny, nx)) {
              grown.at(y, x) = 1;
              break;
            }
          }
        }
      out = grown;
    }
  }
  return out;
}

Mask dilate_chebyshev(const Mask& m, int radius) {
  Mask out = m;
  for (int step = 0; step < radius; ++step) {
    Mask grown = out;
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        if (out.at(y, x)) continue;
        for (int dy = -1; dy <= 1 && !grown.at(y, x); ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= out.h || nx < 0 || nx >= out.w) continue;
            if (out.at(ny, nx)) {
              grown.at(y, x) = 1;
              break;
            }
          }
      }
    out = grown;
  }
  return out;
}

}  // namespace saunet
