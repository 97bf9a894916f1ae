#include <cstring>
#include <memory>
#include <vector>

#include "saunet/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace saunet {

namespace {

// C[M x N] += A[M x K] * B[K x N], all row-major. Each output element
// receives its products in ascending k order, which keeps results identical
// to a plain nested-loop convolution and independent of the worker count.
// k is processed four rows at a time so each C row is touched once per
// group; the per-element add chain stays strictly k-ordered.
template <typename S>
void gemm_accum(int M, int K, int N, const S* A, const S* B, S* C) {
  for (int i = 0; i < M; ++i) {
    const S* a = A + static_cast<int64_t>(i) * K;
    S* c = C + static_cast<int64_t>(i) * N;
    int k = 0;
    for (; k + 4 <= K; k += 4) {
      const S a0 = a[k], a1 = a[k + 1], a2 = a[k + 2], a3 = a[k + 3];
      const S* b0 = B + static_cast<int64_t>(k) * N;
      const S* b1 = b0 + N;
      const S* b2 = b1 + N;
      const S* b3 = b2 + N;
      for (int j = 0; j < N; ++j) {
        S acc = c[j];
        acc += a0 * b0[j];
        acc += a1 * b1[j];
        acc += a2 * b2[j];
        acc += a3 * b3[j];
        c[j] = acc;
      }
    }
    for (; k < K; ++k) {
      const S aik = a[k];
      const S* b = B + static_cast<int64_t>(k) * N;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// Unrolls one image into a [Cin*KH*KW x OH*OW] patch matrix, zero-padding
// out-of-bounds taps.
template <typename S>
void im2col(const S* xn, int Cin, int H, int W, int KH, int KW, int stride, int pad,
            int OH, int OW, S* cols) {
  const int64_t np = static_cast<int64_t>(OH) * OW;
  int r = 0;
  for (int ci = 0; ci < Cin; ++ci)
    for (int ki = 0; ki < KH; ++ki)
      for (int kj = 0; kj < KW; ++kj, ++r) {
        S* crow = cols + static_cast<int64_t>(r) * np;
        int64_t idx = 0;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) {
            for (int ow = 0; ow < OW; ++ow) crow[idx++] = S(0);
            continue;
          }
          const S* xrow = xn + (static_cast<int64_t>(ci) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + kj;
            crow[idx++] = (iw >= 0 && iw < W) ? xrow[iw] : S(0);
          }
        }
      }
}

// Adjoint of im2col: scatter-adds patch-matrix gradients back to the image.
template <typename S>
void col2im_accum(const S* cols, int Cin, int H, int W, int KH, int KW, int stride,
                  int pad, int OH, int OW, S* dxn) {
  const int64_t np = static_cast<int64_t>(OH) * OW;
  int r = 0;
  for (int ci = 0; ci < Cin; ++ci)
    for (int ki = 0; ki < KH; ++ki)
      for (int kj = 0; kj < KW; ++kj, ++r) {
        const S* crow = cols + static_cast<int64_t>(r) * np;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          S* xrow = dxn + (static_cast<int64_t>(ci) * H + ih) * W;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) xrow[iw] += crow[static_cast<int64_t>(oh) * OW + ow];
          }
        }
      }
}

struct ConvDims {
  int N, Cin, H, W, Cout, KH, KW, stride, pad, OH, OW;
  int64_t k() const { return static_cast<int64_t>(Cin) * KH * KW; }
  int64_t np() const { return static_cast<int64_t>(OH) * OW; }
};

}  // namespace

template <typename S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w,
                 const Tensor<S>& bias, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    fail("conv2d expects x [N,Cin,H,W] and w [Cout,Cin,kh,kw]; got ",
         shape_str(x.shape()), " and ", shape_str(w.shape()));
  if (stride < 1) fail("conv2d: stride must be >= 1, got ", stride);
  if (pad < 0) fail("conv2d: pad must be >= 0, got ", pad);
  ConvDims d;
  d.N = x.dim(0);
  d.Cin = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = w.dim(0);
  d.KH = w.dim(2);
  d.KW = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  if (w.dim(1) != d.Cin)
    fail("conv2d: input has ", d.Cin, " channels but weight ", shape_str(w.shape()),
         " expects ", w.dim(1));
  if (bias.numel() != d.Cout)
    fail("conv2d: bias length ", bias.numel(), " != ", d.Cout, " output channels");
  if (d.KH > d.H + 2 * pad || d.KW > d.W + 2 * pad)
    fail("conv2d: kernel ", d.KH, "x", d.KW, " larger than padded input ",
         d.H + 2 * pad, "x", d.W + 2 * pad);
  d.OH = (d.H + 2 * pad - d.KH) / stride + 1;
  d.OW = (d.W + 2 * pad - d.KW) / stride + 1;

  Tensor<S> out = Tensor<S>::zeros({d.N, d.Cout, d.OH, d.OW});
  const int64_t k = d.k(), np = d.np();
  const S* wv = w.raw();
  const S* bv = bias.raw();

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(d.N))
#endif
  for (int n = 0; n < d.N; ++n) {
    std::vector<S> cols(static_cast<size_t>(k * np));
    im2col(x.raw() + static_cast<int64_t>(n) * d.Cin * d.H * d.W, d.Cin, d.H, d.W, d.KH,
           d.KW, d.stride, d.pad, d.OH, d.OW, cols.data());
    S* on = out.raw() + static_cast<int64_t>(n) * d.Cout * np;
    for (int co = 0; co < d.Cout; ++co)
      for (int64_t p = 0; p < np; ++p) on[co * np + p] = bv[co];
    gemm_accum(d.Cout, static_cast<int>(k), static_cast<int>(np), wv, cols.data(), on);
  }
  detail::check_finite(out, "conv2d");

  const bool grad = tape && (x.requires_grad() || w.requires_grad() || bias.requires_grad());
  if (grad) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, wc = w, bc = bias, oc = out;
    tape->record("conv2d", out, {x, w, bias}, [xc, wc, bc, oc, d]() mutable {
      const int64_t k = d.k(), np = d.np();
      const S* gy = oc.grad_raw();
      const S* wv = wc.raw();
      const bool gx = xc.requires_grad();
      const bool gw = wc.requires_grad();
      const bool gb = bc.requires_grad();

      std::vector<S> wt;
      if (gx) {  // [k x Cout] transpose of the weight matrix
        wt.resize(static_cast<size_t>(k * d.Cout));
        for (int co = 0; co < d.Cout; ++co)
          for (int64_t r = 0; r < k; ++r) wt[r * d.Cout + co] = wv[co * k + r];
      }
      // Per-image weight-gradient partials, reduced in image order afterwards
      // so the result does not depend on the worker count.
      std::vector<std::vector<S>> dw_parts;
      if (gw) dw_parts.assign(static_cast<size_t>(d.N), {});

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(d.N))
#endif
      for (int n = 0; n < d.N; ++n) {
        const S* gyn = gy + static_cast<int64_t>(n) * d.Cout * np;
        std::vector<S> cols(static_cast<size_t>(k * np));
        im2col(xc.raw() + static_cast<int64_t>(n) * d.Cin * d.H * d.W, d.Cin, d.H, d.W,
               d.KH, d.KW, d.stride, d.pad, d.OH, d.OW, cols.data());
        if (gx) {
          std::vector<S> dcols(static_cast<size_t>(k * np), S(0));
          gemm_accum(static_cast<int>(k), d.Cout, static_cast<int>(np), wt.data(), gyn,
                     dcols.data());
          col2im_accum(dcols.data(), d.Cin, d.H, d.W, d.KH, d.KW, d.stride, d.pad, d.OH,
                       d.OW,
                       xc.grad_raw() + static_cast<int64_t>(n) * d.Cin * d.H * d.W);
        }
        if (gw) {
          std::vector<S> colsT(static_cast<size_t>(np * k));
          for (int64_t r = 0; r < k; ++r)
            for (int64_t p = 0; p < np; ++p) colsT[p * k + r] = cols[r * np + p];
          auto& part = dw_parts[static_cast<size_t>(n)];
          part.assign(static_cast<size_t>(d.Cout * k), S(0));
          gemm_accum(d.Cout, static_cast<int>(np), static_cast<int>(k), gyn, colsT.data(),
                     part.data());
        }
      }
      if (gw) {
        S* dw = wc.grad_raw();
        for (int n = 0; n < d.N; ++n) {
          const auto& part = dw_parts[static_cast<size_t>(n)];
          for (int64_t i = 0; i < d.Cout * k; ++i) dw[i] += part[static_cast<size_t>(i)];
        }
      }
      if (gb) {
        S* db = bc.grad_raw();
        for (int n = 0; n < d.N; ++n)
          for (int co = 0; co < d.Cout; ++co) {
            const S* gyr = gy + (static_cast<int64_t>(n) * d.Cout + co) * np;
            S acc = S(0);
            for (int64_t p = 0; p < np; ++p) acc += gyr[p];
            db[co] += acc;
          }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose_conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>& bias, int stride) {
  if (x.ndim() != 4 || w.ndim() != 4)
    fail("transpose_conv2d expects x [N,Cin,H,W] and w [Cin,Cout,kh,kw]; got ",
         shape_str(x.shape()), " and ", shape_str(w.shape()));
  if (stride != 1 && stride != 2)
    fail("transpose_conv2d: unsupported stride ", stride, " (expected 1 or 2)");
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  if (w.dim(0) != Cin)
    fail("transpose_conv2d: input has ", Cin, " channels but weight ",
         shape_str(w.shape()), " expects ", w.dim(0));
  if (bias.numel() != Cout)
    fail("transpose_conv2d: bias length ", bias.numel(), " != ", Cout);
  const int OH = (H - 1) * stride + KH;
  const int OW = (W - 1) * stride + KW;

  Tensor<S> out = Tensor<S>::zeros({N, Cout, OH, OW});
  const S* wv = w.raw();
  const S* bv = bias.raw();

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(N))
#endif
  for (int n = 0; n < N; ++n) {
    S* on = out.raw() + static_cast<int64_t>(n) * Cout * OH * OW;
    for (int co = 0; co < Cout; ++co) {
      S* plane = on + static_cast<int64_t>(co) * OH * OW;
      for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) plane[i] = bv[co];
    }
    const S* xn = x.raw() + static_cast<int64_t>(n) * Cin * H * W;
    for (int ci = 0; ci < Cin; ++ci)
      for (int co = 0; co < Cout; ++co) {
        const S* wk = wv + (static_cast<int64_t>(ci) * Cout + co) * KH * KW;
        S* plane = on + static_cast<int64_t>(co) * OH * OW;
        for (int h = 0; h < H; ++h)
          for (int ww = 0; ww < W; ++ww) {
            const S v = xn[(static_cast<int64_t>(ci) * H + h) * W + ww];
            for (int ki = 0; ki < KH; ++ki)
              for (int kj = 0; kj < KW; ++kj)
                plane[static_cast<int64_t>(h * stride + ki) * OW + ww * stride + kj] +=
                    v * wk[ki * KW + kj];
          }
      }
  }
  detail::check_finite(out, "transpose_conv2d");

  const bool grad = tape && (x.requires_grad() || w.requires_grad() || bias.requires_grad());
  if (grad) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, wc = w, bc = bias, oc = out;
    tape->record("transpose_conv2d", out, {x, w, bias},
                 [xc, wc, bc, oc, stride, OH, OW]() mutable {
      const int N = xc.dim(0), Cin = xc.dim(1), H = xc.dim(2), W = xc.dim(3);
      const int Cout = wc.dim(1), KH = wc.dim(2), KW = wc.dim(3);
      const S* gy = oc.grad_raw();
      const S* wv = wc.raw();
      const bool gx = xc.requires_grad();
      const bool gw = wc.requires_grad();
      const bool gb = bc.requires_grad();

      std::vector<std::vector<S>> dw_parts;
      if (gw) dw_parts.assign(static_cast<size_t>(N), {});

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(detail::resolve_threads(N))
#endif
      for (int n = 0; n < N; ++n) {
        const S* gyn = gy + static_cast<int64_t>(n) * Cout * OH * OW;
        const S* xn = xc.raw() + static_cast<int64_t>(n) * Cin * H * W;
        std::vector<S>* part = nullptr;
        if (gw) {
          part = &dw_parts[static_cast<size_t>(n)];
          part->assign(static_cast<size_t>(Cin) * Cout * KH * KW, S(0));
        }
        for (int ci = 0; ci < Cin; ++ci)
          for (int co = 0; co < Cout; ++co) {
            const S* wk = wv + (static_cast<int64_t>(ci) * Cout + co) * KH * KW;
            const S* gplane = gyn + static_cast<int64_t>(co) * OH * OW;
            for (int h = 0; h < H; ++h)
              for (int ww = 0; ww < W; ++ww) {
                S accx = S(0);
                const S xv = xn[(static_cast<int64_t>(ci) * H + h) * W + ww];
                for (int ki = 0; ki < KH; ++ki)
                  for (int kj = 0; kj < KW; ++kj) {
                    const S g =
                        gplane[static_cast<int64_t>(h * stride + ki) * OW + ww * stride + kj];
                    accx += g * wk[ki * KW + kj];
                    if (gw)
                      (*part)[((static_cast<int64_t>(ci) * Cout + co) * KH + ki) * KW + kj] +=
                          g * xv;
                  }
                if (gx)
                  xc.grad_raw()[static_cast<int64_t>(n) * Cin * H * W +
                                (static_cast<int64_t>(ci) * H + h) * W + ww] += accx;
              }
          }
      }
      if (gw) {
        S* dw = wc.grad_raw();
        const int64_t wn = wc.numel();
        for (int n = 0; n < N; ++n)
          for (int64_t i = 0; i < wn; ++i) dw[i] += dw_parts[static_cast<size_t>(n)][static_cast<size_t>(i)];
      }
      if (gb) {
        S* db = bc.grad_raw();
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Cout; ++co) {
            const S* gplane = gy + (static_cast<int64_t>(n) * Cout + co) * OH * OW;
            S acc = S(0);
            for (int64_t i = 0; i < static_cast<int64_t>(OH) * OW; ++i) acc += gplane[i];
            db[co] += acc;
          }
      }
    });
  }
  return out;
}

template Tensor<float> conv2d<float>(Tape<float>*, const Tensor<float>&,
                                     const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> conv2d<double>(Tape<double>*, const Tensor<double>&,
                                       const Tensor<double>&, const Tensor<double>&, int,
                                       int);
template Tensor<float> transpose_conv2d<float>(Tape<float>*, const Tensor<float>&,
                                               const Tensor<float>&, const Tensor<float>&,
                                               int);
template Tensor<double> transpose_conv2d<double>(Tape<double>*, const Tensor<double>&,
                                                 const Tensor<double>&,
                                                 const Tensor<double>&, int);

}  // namespace saunet
