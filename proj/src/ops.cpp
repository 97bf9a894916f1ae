#include "saunet/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace saunet {

namespace {
std::atomic<bool> g_finite_checks{true};
std::atomic<int> g_num_threads{0};
}  // namespace

void set_finite_checks(bool on) { g_finite_checks.store(on); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

void set_num_threads(int n) {
  g_num_threads.store(n < 0 ? 0 : n);
}

int num_threads() {
  int n = g_num_threads.load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
  if (!g_finite_checks.load()) return;
  for (S v : t.data())
    if (!std::isfinite(v)) fail("non-finite value produced by ", op);
}

template void check_finite<float>(const Tensor<float>&, const char*);
template void check_finite<double>(const Tensor<double>&, const char*);

int resolve_threads(int64_t items) {
  int t = num_threads();
  if (items < 2) return 1;
  return static_cast<int>(std::min<int64_t>(t, items));
}

}  // namespace detail

namespace {

template <typename S>
bool want_grad(Tape<S>* tape, std::initializer_list<const Tensor<S>*> ins) {
  if (!tape) return false;
  for (const Tensor<S>* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

enum class Broadcast { Same, Scalar, Channel };

// Accepted pairings: equal shapes, scalar b, or b = [N,1,H,W] against
// a = [N,C,H,W].
template <typename S>
Broadcast broadcast_mode(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.numel() == 1) return Broadcast::Scalar;
  if (a.ndim() == 4 && b.ndim() == 4 && b.dim(0) == a.dim(0) && b.dim(1) == 1 &&
      b.dim(2) == a.dim(2) && b.dim(3) == a.dim(3))
    return Broadcast::Channel;
  fail(op, ": shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()),
       " are not broadcast-compatible");
}

// Shared machinery for binary elementwise ops. Fwd computes one scalar;
// DfA/DfB map (gy, a, b) to the gradient contributions.
template <typename S, typename Fwd, typename DfA, typename DfB>
Tensor<S> ewise_binary(Tape<S>* tape, const char* name, const Tensor<S>& a,
                       const Tensor<S>& b, Fwd fwd, DfA dfa, DfB dfb) {
  const Broadcast mode = broadcast_mode(name, a, b);
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* av = a.raw();
  const S* bv = b.raw();
  S* ov = out.raw();
  const int64_t n = a.numel();

  if (mode == Broadcast::Same) {
    for (int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i]);
  } else if (mode == Broadcast::Scalar) {
    const S c = bv[0];
    for (int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], c);
  } else {
    const int N = a.dim(0), C = a.dim(1);
    const int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    for (int img = 0; img < N; ++img)
      for (int c = 0; c < C; ++c) {
        const S* ap = av + (static_cast<int64_t>(img) * C + c) * hw;
        const S* bp = bv + static_cast<int64_t>(img) * hw;
        S* op = ov + (static_cast<int64_t>(img) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) op[i] = fwd(ap[i], bp[i]);
      }
  }
  detail::check_finite(out, name);

  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor<S> ac = a, bc = b, oc = out;
    tape->record(name, out, {a, b}, [ac, bc, oc, mode, dfa, dfb]() mutable {
      const S* gy = oc.grad_raw();
      const S* av = ac.raw();
      const S* bv = bc.raw();
      const int64_t n = ac.numel();
      const bool ga = ac.requires_grad();
      const bool gb = bc.requires_grad();
      S* da = ga ? ac.grad_raw() : nullptr;
      S* db = gb ? bc.grad_raw() : nullptr;
      if (mode == Broadcast::Same) {
        for (int64_t i = 0; i < n; ++i) {
          if (ga) da[i] += dfa(gy[i], av[i], bv[i]);
          if (gb) db[i] += dfb(gy[i], av[i], bv[i]);
        }
      } else if (mode == Broadcast::Scalar) {
        const S c = bv[0];
        for (int64_t i = 0; i < n; ++i) {
          if (ga) da[i] += dfa(gy[i], av[i], c);
          if (gb) db[0] += dfb(gy[i], av[i], c);
        }
      } else {
        const int N = ac.dim(0), C = ac.dim(1);
        const int64_t hw = static_cast<int64_t>(ac.dim(2)) * ac.dim(3);
        for (int img = 0; img < N; ++img)
          for (int c = 0; c < C; ++c) {
            const int64_t ao = (static_cast<int64_t>(img) * C + c) * hw;
            const int64_t bo = static_cast<int64_t>(img) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              if (ga) da[ao + i] += dfa(gy[ao + i], av[ao + i], bv[bo + i]);
              if (gb) db[bo + i] += dfb(gy[ao + i], av[ao + i], bv[bo + i]);
            }
          }
      }
    });
  }
  return out;
}

// Unary elementwise helper; backward receives (gy, x, y).
template <typename S, typename Fwd, typename Df>
Tensor<S> ewise_unary(Tape<S>* tape, const char* name, const Tensor<S>& x, Fwd fwd,
                      Df df) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* xv = x.raw();
  S* ov = out.raw();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  detail::check_finite(out, name);

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record(name, out, {x}, [xc, oc, df]() mutable {
      const S* gy = oc.grad_raw();
      const S* xv = xc.raw();
      const S* yv = oc.raw();
      S* dx = xc.grad_raw();
      const int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i) dx[i] += df(gy[i], xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

template <typename S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  return ewise_binary(
      tape, "add", a, b, [](S x, S y) { return x + y; },
      [](S g, S, S) { return g; }, [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> sub(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  return ewise_binary(
      tape, "sub", a, b, [](S x, S y) { return x - y; },
      [](S g, S, S) { return g; }, [](S g, S, S) { return -g; });
}

template <typename S>
Tensor<S> mul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  return ewise_binary(
      tape, "mul", a, b, [](S x, S y) { return x * y; },
      [](S g, S, S y) { return g * y; }, [](S g, S x, S) { return g * x; });
}

template <typename S>
Tensor<S> div(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  return ewise_binary(
      tape, "div", a, b, [](S x, S y) { return x / y; },
      [](S g, S, S y) { return g / y; },
      [](S g, S x, S y) { return -g * x / (y * y); });
}

template <typename S>
Tensor<S> add_scalar(Tape<S>* tape, const Tensor<S>& a, S c) {
  return ewise_unary(
      tape, "add_scalar", a, [c](S x) { return x + c; },
      [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> scale(Tape<S>* tape, const Tensor<S>& a, S c) {
  return ewise_unary(
      tape, "scale", a, [c](S x) { return x * c; },
      [c](S g, S, S) { return g * c; });
}

template <typename S>
Tensor<S> clamp(Tape<S>* tape, const Tensor<S>& a, S lo, S hi) {
  if (lo > hi) fail("clamp: lo ", lo, " > hi ", hi);
  return ewise_unary(
      tape, "clamp", a,
      [lo, hi](S x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](S g, S x, S) { return (x >= lo && x <= hi) ? g : S(0); });
}

// ---- activations -----------------------------------------------------------

template <typename S>
Tensor<S> relu(Tape<S>* tape, const Tensor<S>& x) {
  return ewise_unary(
      tape, "relu", x, [](S v) { return v > S(0) ? v : S(0); },
      [](S g, S v, S) { return v > S(0) ? g : S(0); });
}

template <typename S>
Tensor<S> sigmoid(Tape<S>* tape, const Tensor<S>& x) {
  return ewise_unary(
      tape, "sigmoid", x,
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S g, S, S y) { return g * y * (S(1) - y); });
}

template <typename S>
Tensor<S> log(Tape<S>* tape, const Tensor<S>& x) {
  return ewise_unary(
      tape, "log", x, [](S v) { return std::log(v); },
      [](S g, S v, S) { return g / v; });
}

template <typename S>
Tensor<S> softmax_channels(Tape<S>* tape, const Tensor<S>& x) {
  if (x.ndim() != 4) fail("softmax_channels expects [N,C,H,W], got ", shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* xv = x.raw();
  S* ov = out.raw();
  for (int n = 0; n < N; ++n) {
    const int64_t base = static_cast<int64_t>(n) * C * hw;
    for (int64_t p = 0; p < hw; ++p) {
      S m = xv[base + p];
      for (int c = 1; c < C; ++c) m = std::max(m, xv[base + c * hw + p]);
      S sum = S(0);
      for (int c = 0; c < C; ++c) {
        const S e = std::exp(xv[base + c * hw + p] - m);
        ov[base + c * hw + p] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (int c = 0; c < C; ++c) ov[base + c * hw + p] *= inv;
    }
  }
  detail::check_finite(out, "softmax_channels");

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("softmax_channels", out, {x}, [xc, oc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const int64_t hw = static_cast<int64_t>(xc.dim(2)) * xc.dim(3);
      const S* gy = oc.grad_raw();
      const S* p = oc.raw();
      S* dx = xc.grad_raw();
      for (int n = 0; n < N; ++n) {
        const int64_t base = static_cast<int64_t>(n) * C * hw;
        for (int64_t px = 0; px < hw; ++px) {
          S dot = S(0);
          for (int c = 0; c < C; ++c) dot += gy[base + c * hw + px] * p[base + c * hw + px];
          for (int c = 0; c < C; ++c) {
            const int64_t i = base + c * hw + px;
            dx[i] += p[i] * (gy[i] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---- structure -------------------------------------------------------------

template <typename S>
Tensor<S> concat_channels(Tape<S>* tape, const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) fail("concat_channels: no inputs");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int total_c = 0;
  for (const auto& t : xs) {
    if (t.ndim() != 4) fail("concat_channels expects [N,C,H,W], got ", shape_str(t.shape()));
    if (t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
      fail("concat_channels: input ", shape_str(t.shape()),
           " does not match leading input ", shape_str(xs[0].shape()));
    total_c += t.dim(1);
  }
  Tensor<S> out = Tensor<S>::zeros({N, total_c, H, W});
  const int64_t hw = static_cast<int64_t>(H) * W;
  S* ov = out.raw();
  for (int n = 0; n < N; ++n) {
    int64_t coff = 0;
    for (const auto& t : xs) {
      const int c_in = t.dim(1);
      const S* src = t.raw() + static_cast<int64_t>(n) * c_in * hw;
      std::memcpy(ov + (static_cast<int64_t>(n) * total_c + coff) * hw, src,
                  static_cast<size_t>(c_in * hw) * sizeof(S));
      coff += c_in;
    }
  }

  bool grad = false;
  if (tape)
    for (const auto& t : xs) grad = grad || t.requires_grad();
  if (grad) {
    out.set_requires_grad(true);
    std::vector<Tensor<S>> ins = xs;
    Tensor<S> oc = out;
    tape->record("concat_channels", out, ins, [ins, oc, total_c, hw]() mutable {
      const S* gy = oc.grad_raw();
      const int N = oc.dim(0);
      for (int n = 0; n < N; ++n) {
        int64_t coff = 0;
        for (auto& t : ins) {
          const int c_in = t.dim(1);
          if (t.requires_grad()) {
            S* dst = t.grad_raw() + static_cast<int64_t>(n) * c_in * hw;
            const S* src = gy + (static_cast<int64_t>(n) * total_c + coff) * hw;
            for (int64_t i = 0; i < c_in * hw; ++i) dst[i] += src[i];
          }
          coff += c_in;
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> stack_channels(Tape<S>* tape, const Tensor<S>& x, int channels) {
  if (x.ndim() != 4 || x.dim(1) != 1)
    fail("stack_channels expects [N,1,H,W], got ", shape_str(x.shape()));
  if (channels < 1) fail("stack_channels: channel count must be positive");
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
  const int64_t hw = static_cast<int64_t>(H) * W;
  Tensor<S> out = Tensor<S>::zeros({N, channels, H, W});
  for (int n = 0; n < N; ++n) {
    const S* src = x.raw() + static_cast<int64_t>(n) * hw;
    for (int c = 0; c < channels; ++c)
      std::memcpy(out.raw() + (static_cast<int64_t>(n) * channels + c) * hw, src,
                  static_cast<size_t>(hw) * sizeof(S));
  }
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("stack_channels", out, {x}, [xc, oc, channels, hw]() mutable {
      const S* gy = oc.grad_raw();
      S* dx = xc.grad_raw();
      const int N = xc.dim(0);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < channels; ++c) {
          const S* src = gy + (static_cast<int64_t>(n) * channels + c) * hw;
          S* dst = dx + static_cast<int64_t>(n) * hw;
          for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

// ---- pooling ---------------------------------------------------------------

template <typename S>
Tensor<S> maxpool2d(Tape<S>* tape, const Tensor<S>& x) {
  if (x.ndim() != 4) fail("maxpool2d expects [N,C,H,W], got ", shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  Tensor<S> out = Tensor<S>::zeros({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.numel());
  const S* xv = x.raw();
  S* ov = out.raw();
  int64_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = xv + (static_cast<int64_t>(n) * C + c) * H * W;
      const int64_t pbase = (static_cast<int64_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          S best = -std::numeric_limits<S>::infinity();
          int64_t best_idx = -1;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int ih = oh * 2 + dy, iw = ow * 2 + dx;
              if (ih >= H || iw >= W) continue;  // -inf pad
              const S v = plane[static_cast<int64_t>(ih) * W + iw];
              if (v > best) {
                best = v;
                best_idx = pbase + static_cast<int64_t>(ih) * W + iw;
              }
            }
          ov[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
    }
  detail::check_finite(out, "maxpool2d");

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("maxpool2d", out, {x}, [xc, oc, argmax]() mutable {
      const S* gy = oc.grad_raw();
      S* dx = xc.grad_raw();
      const int64_t n = oc.numel();
      for (int64_t i = 0; i < n; ++i) dx[(*argmax)[static_cast<size_t>(i)]] += gy[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> avgpool2d(Tape<S>* tape, const Tensor<S>& x) {
  if (x.ndim() != 4) fail("avgpool2d expects [N,C,H,W], got ", shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  Tensor<S> out = Tensor<S>::zeros({N, C, OH, OW});
  const S* xv = x.raw();
  S* ov = out.raw();
  int64_t oi = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = xv + (static_cast<int64_t>(n) * C + c) * H * W;
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow, ++oi) {
          S acc = S(0);
          int cnt = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int ih = oh * 2 + dy, iw = ow * 2 + dx;
              if (ih >= H || iw >= W) continue;
              acc += plane[static_cast<int64_t>(ih) * W + iw];
              ++cnt;
            }
          ov[oi] = acc / static_cast<S>(cnt);
        }
    }

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("avgpool2d", out, {x}, [xc, oc]() mutable {
      const int N = xc.dim(0), C = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int OH = (H + 1) / 2, OW = (W + 1) / 2;
      const S* gy = oc.grad_raw();
      S* dx = xc.grad_raw();
      int64_t oi = 0;
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          S* plane = dx + (static_cast<int64_t>(n) * C + c) * H * W;
          for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow, ++oi) {
              int cnt = 0;
              for (int dy = 0; dy < 2; ++dy)
                for (int dx2 = 0; dx2 < 2; ++dx2) {
                  if (oh * 2 + dy >= H || ow * 2 + dx2 >= W) continue;
                  ++cnt;
                }
              const S g = gy[oi] / static_cast<S>(cnt);
              for (int dy = 0; dy < 2; ++dy)
                for (int dx2 = 0; dx2 < 2; ++dx2) {
                  const int ih = oh * 2 + dy, iw = ow * 2 + dx2;
                  if (ih >= H || iw >= W) continue;
                  plane[static_cast<int64_t>(ih) * W + iw] += g;
                }
            }
        }
    });
  }
  return out;
}

template <typename S>
Tensor<S> global_avg_pool(Tape<S>* tape, const Tensor<S>& x) {
  if (x.ndim() != 4) fail("global_avg_pool expects [N,C,H,W], got ", shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor<S> out = Tensor<S>::zeros({N, C});
  const S* xv = x.raw();
  S* ov = out.raw();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S* plane = xv + (static_cast<int64_t>(n) * C + c) * hw;
      S acc = S(0);
      for (int64_t i = 0; i < hw; ++i) acc += plane[i];
      ov[static_cast<int64_t>(n) * C + c] = acc / static_cast<S>(hw);
    }

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("global_avg_pool", out, {x}, [xc, oc, hw]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const S* gy = oc.grad_raw();
      S* dx = xc.grad_raw();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const S g = gy[static_cast<int64_t>(n) * C + c] / static_cast<S>(hw);
          S* plane = dx + (static_cast<int64_t>(n) * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) plane[i] += g;
        }
    });
  }
  return out;
}

template <typename S>
Tensor<S> bilinear_upsample(Tape<S>* tape, const Tensor<S>& x, int out_h, int out_w) {
  if (x.ndim() != 4) fail("bilinear_upsample expects [N,C,H,W], got ", shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h < H || out_w < W)
    fail("bilinear_upsample: downscaling requested (", H, "x", W, " -> ", out_h, "x",
         out_w, ")");
  Tensor<S> out = Tensor<S>::zeros({N, C, out_h, out_w});
  const S* xv = x.raw();
  S* ov = out.raw();
  const int64_t planes = static_cast<int64_t>(N) * C;

  // Align-corners sampling: source = i*(in-1)/(out-1), exact at both ends.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(planes))
#endif
  for (int64_t pl = 0; pl < planes; ++pl) {
    const S* src = xv + pl * H * W;
    S* dst = ov + pl * static_cast<int64_t>(out_h) * out_w;
    for (int oh = 0; oh < out_h; ++oh) {
      const S sy = out_h > 1 ? static_cast<S>(static_cast<int64_t>(oh) * (H - 1)) /
                                   static_cast<S>(out_h - 1)
                             : S(0);
      const int y0 = std::min(static_cast<int>(sy), H - 1);
      const int y1 = std::min(y0 + 1, H - 1);
      const S fy = sy - static_cast<S>(y0);
      for (int ow = 0; ow < out_w; ++ow) {
        const S sx = out_w > 1 ? static_cast<S>(static_cast<int64_t>(ow) * (W - 1)) /
                                     static_cast<S>(out_w - 1)
                               : S(0);
        const int x0 = std::min(static_cast<int>(sx), W - 1);
        const int x1 = std::min(x0 + 1, W - 1);
        const S fx = sx - static_cast<S>(x0);
        const S top = (S(1) - fx) * src[static_cast<int64_t>(y0) * W + x0] +
                      fx * src[static_cast<int64_t>(y0) * W + x1];
        const S bot = (S(1) - fx) * src[static_cast<int64_t>(y1) * W + x0] +
                      fx * src[static_cast<int64_t>(y1) * W + x1];
        dst[static_cast<int64_t>(oh) * out_w + ow] = (S(1) - fy) * top + fy * bot;
      }
    }
  }

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("bilinear_upsample", out, {x}, [xc, oc, out_h, out_w]() mutable {
      const int H = xc.dim(2), W = xc.dim(3);
      const int64_t planes = static_cast<int64_t>(xc.dim(0)) * xc.dim(1);
      const S* gy = oc.grad_raw();
      S* dx = xc.grad_raw();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(planes))
#endif
      for (int64_t pl = 0; pl < planes; ++pl) {
        const S* g = gy + pl * static_cast<int64_t>(out_h) * out_w;
        S* d = dx + pl * H * W;
        for (int oh = 0; oh < out_h; ++oh) {
          const S sy = out_h > 1 ? static_cast<S>(static_cast<int64_t>(oh) * (H - 1)) /
                                       static_cast<S>(out_h - 1)
                                 : S(0);
          const int y0 = std::min(static_cast<int>(sy), H - 1);
          const int y1 = std::min(y0 + 1, H - 1);
          const S fy = sy - static_cast<S>(y0);
          for (int ow = 0; ow < out_w; ++ow) {
            const S sx = out_w > 1
                             ? static_cast<S>(static_cast<int64_t>(ow) * (W - 1)) /
                                   static_cast<S>(out_w - 1)
                             : S(0);
            const int x0 = std::min(static_cast<int>(sx), W - 1);
            const int x1 = std::min(x0 + 1, W - 1);
            const S fx = sx - static_cast<S>(x0);
            const S gv = g[static_cast<int64_t>(oh) * out_w + ow];
            d[static_cast<int64_t>(y0) * W + x0] += (S(1) - fy) * (S(1) - fx) * gv;
            d[static_cast<int64_t>(y0) * W + x1] += (S(1) - fy) * fx * gv;
            d[static_cast<int64_t>(y1) * W + x0] += fy * (S(1) - fx) * gv;
            d[static_cast<int64_t>(y1) * W + x1] += fy * fx * gv;
          }
        }
      }
    });
  }
  return out;
}

// ---- batch normalization ----------------------------------------------------

template <typename S>
Tensor<S> batchnorm2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gamma,
                      const Tensor<S>& beta, Tensor<S>& running_mean,
                      Tensor<S>& running_var, bool training, S momentum, S eps) {
  if (x.ndim() != 4) fail("batchnorm2d expects [N,C,H,W], got ", shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    fail("batchnorm2d: parameter length does not match ", C, " channels");
  const int64_t hw = static_cast<int64_t>(H) * W;
  const int64_t count = static_cast<int64_t>(N) * hw;
  if (training && count < 2) fail("batchnorm2d: train mode needs batch*H*W >= 2, got ", count);

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  auto mean = std::make_shared<std::vector<S>>(C);
  auto invstd = std::make_shared<std::vector<S>>(C);
  const S* xv = x.raw();
  S* ov = out.raw();
  const S* gv = gamma.raw();
  const S* bv = beta.raw();

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(C))
#endif
  for (int c = 0; c < C; ++c) {
    S m, istd;
    if (training) {
      S acc = S(0);
      for (int n = 0; n < N; ++n) {
        const S* plane = xv + (static_cast<int64_t>(n) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) acc += plane[i];
      }
      m = acc / static_cast<S>(count);
      S vacc = S(0);
      for (int n = 0; n < N; ++n) {
        const S* plane = xv + (static_cast<int64_t>(n) * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const S d = plane[i] - m;
          vacc += d * d;
        }
      }
      const S var = vacc / static_cast<S>(count);
      istd = S(1) / std::sqrt(var + eps);
      running_mean.raw()[c] = (S(1) - momentum) * running_mean.raw()[c] + momentum * m;
      const S var_unbiased = var * static_cast<S>(count) / static_cast<S>(count - 1);
      running_var.raw()[c] =
          (S(1) - momentum) * running_var.raw()[c] + momentum * var_unbiased;
    } else {
      m = running_mean.raw()[c];
      istd = S(1) / std::sqrt(running_var.raw()[c] + eps);
    }
    (*mean)[static_cast<size_t>(c)] = m;
    (*invstd)[static_cast<size_t>(c)] = istd;
    const S g = gv[c], b = bv[c];
    for (int n = 0; n < N; ++n) {
      const S* src = xv + (static_cast<int64_t>(n) * C + c) * hw;
      S* dst = ov + (static_cast<int64_t>(n) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = g * (src[i] - m) * istd + b;
    }
  }
  detail::check_finite(out, "batchnorm2d");

  if (want_grad(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, gc = gamma, bc = beta, oc = out;
    tape->record("batchnorm2d", out, {x, gamma, beta},
                 [xc, gc, bc, oc, mean, invstd, training, count, hw]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const S* gy = oc.grad_raw();
      const S* xv = xc.raw();
      const S* gv = gc.raw();
      const bool gx = xc.requires_grad();
      const bool gg = gc.requires_grad();
      const bool gb = bc.requires_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(C))
#endif
      for (int c = 0; c < C; ++c) {
        const S m = (*mean)[static_cast<size_t>(c)];
        const S istd = (*invstd)[static_cast<size_t>(c)];
        S sum_gy = S(0), sum_gy_xhat = S(0);
        for (int n = 0; n < N; ++n) {
          const int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            const S xhat = (xv[off + i] - m) * istd;
            sum_gy += gy[off + i];
            sum_gy_xhat += gy[off + i] * xhat;
          }
        }
        if (gg) gc.grad_raw()[c] += sum_gy_xhat;
        if (gb) bc.grad_raw()[c] += sum_gy;
        if (gx) {
          S* dx = xc.grad_raw();
          const S g = gv[c];
          if (training) {
            const S inv_n = S(1) / static_cast<S>(count);
            for (int n = 0; n < N; ++n) {
              const int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const S xhat = (xv[off + i] - m) * istd;
                dx[off + i] +=
                    g * istd * (gy[off + i] - inv_n * sum_gy - xhat * inv_n * sum_gy_xhat);
              }
            }
          } else {
            for (int n = 0; n < N; ++n) {
              const int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
              for (int64_t i = 0; i < hw; ++i) dx[off + i] += g * istd * gy[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- affine ----------------------------------------------------------------

template <typename S>
Tensor<S> linear(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w,
                 const Tensor<S>& b) {
  if (x.ndim() != 2 || w.ndim() != 2)
    fail("linear expects x [N,Cin], w [Cout,Cin]; got ", shape_str(x.shape()), " and ",
         shape_str(w.shape()));
  const int N = x.dim(0), Cin = x.dim(1), Cout = w.dim(0);
  if (w.dim(1) != Cin)
    fail("linear: weight ", shape_str(w.shape()), " does not match input ",
         shape_str(x.shape()));
  if (b.numel() != Cout) fail("linear: bias length ", b.numel(), " != ", Cout);

  Tensor<S> out = Tensor<S>::zeros({N, Cout});
  const S* xv = x.raw();
  const S* wv = w.raw();
  const S* bv = b.raw();
  S* ov = out.raw();
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Cout; ++co) {
      S acc = bv[co];
      const S* xr = xv + static_cast<int64_t>(n) * Cin;
      const S* wr = wv + static_cast<int64_t>(co) * Cin;
      for (int ci = 0; ci < Cin; ++ci) acc += xr[ci] * wr[ci];
      ov[static_cast<int64_t>(n) * Cout + co] = acc;
    }
  detail::check_finite(out, "linear");

  if (want_grad(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, wc = w, bc = b, oc = out;
    tape->record("linear", out, {x, w, b}, [xc, wc, bc, oc]() mutable {
      const int N = xc.dim(0), Cin = xc.dim(1), Cout = wc.dim(0);
      const S* gy = oc.grad_raw();
      const S* xv = xc.raw();
      const S* wv = wc.raw();
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
          const S g = gy[static_cast<int64_t>(n) * Cout + co];
          if (xc.requires_grad()) {
            S* dx = xc.grad_raw() + static_cast<int64_t>(n) * Cin;
            const S* wr = wv + static_cast<int64_t>(co) * Cin;
            for (int ci = 0; ci < Cin; ++ci) dx[ci] += g * wr[ci];
          }
          if (wc.requires_grad()) {
            S* dw = wc.grad_raw() + static_cast<int64_t>(co) * Cin;
            const S* xr = xv + static_cast<int64_t>(n) * Cin;
            for (int ci = 0; ci < Cin; ++ci) dw[ci] += g * xr[ci];
          }
          if (bc.requires_grad()) bc.grad_raw()[co] += g;
        }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale_channels(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& s) {
  if (x.ndim() != 4 || s.ndim() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
    fail("scale_channels: got x ", shape_str(x.shape()), ", scales ", shape_str(s.shape()));
  const int N = x.dim(0), C = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* xv = x.raw();
  const S* sv = s.raw();
  S* ov = out.raw();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const S k = sv[static_cast<int64_t>(n) * C + c];
      const int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) ov[off + i] = xv[off + i] * k;
    }

  if (want_grad(tape, {&x, &s})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, sc = s, oc = out;
    tape->record("scale_channels", out, {x, s}, [xc, sc, oc, hw]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const S* gy = oc.grad_raw();
      const S* xv = xc.raw();
      const S* sv = sc.raw();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const int64_t off = (static_cast<int64_t>(n) * C + c) * hw;
          const S k = sv[static_cast<int64_t>(n) * C + c];
          if (xc.requires_grad()) {
            S* dx = xc.grad_raw();
            for (int64_t i = 0; i < hw; ++i) dx[off + i] += gy[off + i] * k;
          }
          if (sc.requires_grad()) {
            S acc = S(0);
            for (int64_t i = 0; i < hw; ++i) acc += gy[off + i] * xv[off + i];
            sc.grad_raw()[static_cast<int64_t>(n) * C + c] += acc;
          }
        }
    });
  }
  return out;
}

// ---- reductions ------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(Tape<S>* tape, const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.data()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  detail::check_finite(out, "sum_all");
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("sum_all", out, {x}, [xc, oc]() mutable {
      const S g = oc.grad_raw()[0];
      S* dx = xc.grad_raw();
      const int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum_channelwise(Tape<S>* tape, const Tensor<S>& x) {
  if (x.ndim() != 4) fail("sum_channelwise expects [N,C,H,W], got ", shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor<S> out = Tensor<S>::zeros({C});
  const S* xv = x.raw();
  S* ov = out.raw();
  for (int c = 0; c < C; ++c) {
    S acc = S(0);
    for (int n = 0; n < N; ++n) {
      const S* plane = xv + (static_cast<int64_t>(n) * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) acc += plane[i];
    }
    ov[c] = acc;
  }
  detail::check_finite(out, "sum_channelwise");
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    tape->record("sum_channelwise", out, {x}, [xc, oc, hw]() mutable {
      const int N = xc.dim(0), C = xc.dim(1);
      const S* gy = oc.grad_raw();
      S* dx = xc.grad_raw();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const S g = gy[c];
          S* plane = dx + (static_cast<int64_t>(n) * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) plane[i] += g;
        }
    });
  }
  return out;
}

// ---- instantiations ---------------------------------------------------------

#define SAUNET_INSTANTIATE_OPS(S)                                                        \
  template Tensor<S> add<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> sub<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> mul<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> div<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> add_scalar<S>(Tape<S>*, const Tensor<S>&, S);                       \
  template Tensor<S> scale<S>(Tape<S>*, const Tensor<S>&, S);                            \
  template Tensor<S> clamp<S>(Tape<S>*, const Tensor<S>&, S, S);                         \
  template Tensor<S> relu<S>(Tape<S>*, const Tensor<S>&);                                \
  template Tensor<S> sigmoid<S>(Tape<S>*, const Tensor<S>&);                             \
  template Tensor<S> log<S>(Tape<S>*, const Tensor<S>&);                                 \
  template Tensor<S> softmax_channels<S>(Tape<S>*, const Tensor<S>&);                    \
  template Tensor<S> concat_channels<S>(Tape<S>*, const std::vector<Tensor<S>>&);        \
  template Tensor<S> stack_channels<S>(Tape<S>*, const Tensor<S>&, int);                 \
  template Tensor<S> maxpool2d<S>(Tape<S>*, const Tensor<S>&);                           \
  template Tensor<S> avgpool2d<S>(Tape<S>*, const Tensor<S>&);                           \
  template Tensor<S> global_avg_pool<S>(Tape<S>*, const Tensor<S>&);                     \
  template Tensor<S> bilinear_upsample<S>(Tape<S>*, const Tensor<S>&, int, int);         \
  template Tensor<S> batchnorm2d<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&,        \
                                    const Tensor<S>&, Tensor<S>&, Tensor<S>&, bool, S,   \
                                    S);                                                  \
  template Tensor<S> linear<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&,             \
                               const Tensor<S>&);                                        \
  template Tensor<S> scale_channels<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);    \
  template Tensor<S> sum_all<S>(Tape<S>*, const Tensor<S>&);                             \
  template Tensor<S> sum_channelwise<S>(Tape<S>*, const Tensor<S>&);

SAUNET_INSTANTIATE_OPS(float)
SAUNET_INSTANTIATE_OPS(double)

#undef SAUNET_INSTANTIATE_OPS

}  // namespace saunet
