#include "saunet/canny.hpp"

#include <cmath>
#include <deque>

namespace saunet {

namespace {

inline float at_clamped(const FloatMap& m, int y, int x) {
  y = std::min(std::max(y, 0), m.h - 1);
  x = std::min(std::max(x, 0), m.w - 1);
  return m.at(y, x);
}

FloatMap gaussian_blur(const FloatMap& src, float sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> kernel(static_cast<size_t>(2 * radius + 1));
  float norm = 0.f;
  for (int i = -radius; i <= radius; ++i) {
    const float v = std::exp(-static_cast<float>(i * i) / (2.f * sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    norm += v;
  }
  for (float& v : kernel) v /= norm;

  FloatMap tmp(src.h, src.w), out(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * at_clamped(src, y, x + i);
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[static_cast<size_t>(i + radius)] * at_clamped(tmp, y + i, x);
      out.at(y, x) = acc;
    }
  return out;
}

}  // namespace

Mask canny(const FloatMap& image, float sigma, float lo_ratio, float hi_ratio) {
  if (image.h < 3 || image.w < 3) return Mask(image.h, image.w);
  {
    float mn = image.v[0], mx = image.v[0];
    for (float v : image.v) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    if (mx <= mn) return Mask(image.h, image.w);  // constant image
  }
  const FloatMap smooth = gaussian_blur(image, sigma);

  FloatMap mag(image.h, image.w);
  FloatMap gx(image.h, image.w), gy(image.h, image.w);
  float max_mag = 0.f;
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      const float vx = at_clamped(smooth, y - 1, x + 1) + 2.f * at_clamped(smooth, y, x + 1) +
                       at_clamped(smooth, y + 1, x + 1) - at_clamped(smooth, y - 1, x - 1) -
                       2.f * at_clamped(smooth, y, x - 1) - at_clamped(smooth, y + 1, x - 1);
      const float vy = at_clamped(smooth, y + 1, x - 1) + 2.f * at_clamped(smooth, y + 1, x) +
                       at_clamped(smooth, y + 1, x + 1) - at_clamped(smooth, y - 1, x - 1) -
                       2.f * at_clamped(smooth, y - 1, x) - at_clamped(smooth, y - 1, x + 1);
      gx.at(y, x) = vx;
      gy.at(y, x) = vy;
      const float m = std::sqrt(vx * vx + vy * vy);
      mag.at(y, x) = m;
      max_mag = std::max(max_mag, m);
    }
  if (max_mag <= 0.f) return Mask(image.h, image.w);

  const float lo = lo_ratio * max_mag;
  const float hi = hi_ratio * max_mag;

  // Non-maximum suppression along the quantized gradient direction.
  // 0 = suppressed, 1 = weak candidate, 2 = strong edge.
  Mask state(image.h, image.w);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      const float m = mag.at(y, x);
      if (m <= lo) continue;
      const float vx = gx.at(y, x), vy = gy.at(y, x);
      const float angle = std::atan2(vy, vx) * 180.f / 3.14159265358979f;
      float n1, n2;
      const float a = angle < 0 ? angle + 180.f : angle;
      if (a < 22.5f || a >= 157.5f) {  // horizontal gradient: compare left/right
        n1 = at_clamped(mag, y, x - 1);
        n2 = at_clamped(mag, y, x + 1);
      } else if (a < 67.5f) {  // diagonal
        n1 = at_clamped(mag, y - 1, x - 1);
        n2 = at_clamped(mag, y + 1, x + 1);
      } else if (a < 112.5f) {  // vertical gradient: compare up/down
        n1 = at_clamped(mag, y - 1, x);
        n2 = at_clamped(mag, y + 1, x);
      } else {
        n1 = at_clamped(mag, y - 1, x + 1);
        n2 = at_clamped(mag, y + 1, x - 1);
      }
      if (m >= n1 && m >= n2) state.at(y, x) = m > hi ? 2 : 1;
    }

  // Hysteresis: grow strong edges through weak candidates, 8-connected.
  Mask out(image.h, image.w);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x)
      if (state.at(y, x) == 2) {
        out.at(y, x) = 1;
        queue.push_back({y, x});
      }
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= image.h || nx < 0 || nx >= image.w) continue;
        if (state.at(ny, nx) == 1 && !out.at(ny, nx)) {
          out.at(ny, nx) = 1;
          queue.push_back({ny, nx});
        }
      }
  }
  return out;
}

}  // namespace saunet
