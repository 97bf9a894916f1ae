#pragma once

#include <vector>

#include "saunet/tape.hpp"
#include "saunet/tensor.hpp"

namespace saunet {

/// When enabled (the default), every op scans its output and raises an Error
/// on the first non-finite scalar instead of letting NaN/Inf propagate.
void set_finite_checks(bool on);
bool finite_checks_enabled();

/// Caps the worker count of internally parallel ops; 0 = hardware default.
/// Results are independent of the worker count by construction; this exists
/// for single-thread reproducibility runs and benchmarking.
void set_num_threads(int n);
int num_threads();

// ---- elementwise -----------------------------------------------------------
// a and b must have equal shapes, or b may be a 1-element scalar tensor, or
// b may be a single-channel map [N,1,H,W] broadcast across a's C channels.

template <typename S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> sub(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> mul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> div(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> add_scalar(Tape<S>* tape, const Tensor<S>& a, S c);
template <typename S>
Tensor<S> scale(Tape<S>* tape, const Tensor<S>& a, S c);
template <typename S>
Tensor<S> clamp(Tape<S>* tape, const Tensor<S>& a, S lo, S hi);

// ---- shape / structure -----------------------------------------------------

template <typename S>
Tensor<S> concat_channels(Tape<S>* tape, const std::vector<Tensor<S>>& xs);

/// Replicates a single-channel map [N,1,H,W] into C identical channels.
template <typename S>
Tensor<S> stack_channels(Tape<S>* tape, const Tensor<S>& x, int channels);

// ---- convolution family ----------------------------------------------------

/// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], bias: [Cout].
/// Output spatial dims: floor((H + 2*pad - kh)/stride) + 1.
template <typename S>
Tensor<S> conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w,
                 const Tensor<S>& bias, int stride, int pad);

/// x: [N,Cin,H,W], w: [Cin,Cout,kh,kw], bias: [Cout], stride in {1,2}.
/// Output spatial dims: (H-1)*stride + kh. Adjoint of the matching conv2d.
template <typename S>
Tensor<S> transpose_conv2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>& bias, int stride);

// ---- pooling / resampling --------------------------------------------------

/// 2x2 stride-2 max pool; odd trailing rows/cols are padded with -inf.
template <typename S>
Tensor<S> maxpool2d(Tape<S>* tape, const Tensor<S>& x);

/// 2x2 stride-2 average pool; edge windows divide by their true cell count.
template <typename S>
Tensor<S> avgpool2d(Tape<S>* tape, const Tensor<S>& x);

/// [N,C,H,W] -> [N,C] per-channel spatial mean.
template <typename S>
Tensor<S> global_avg_pool(Tape<S>* tape, const Tensor<S>& x);

/// Align-corners bilinear upsampling; out dims must be >= in dims.
template <typename S>
Tensor<S> bilinear_upsample(Tape<S>* tape, const Tensor<S>& x, int out_h, int out_w);

// ---- normalization ---------------------------------------------------------

/// Train mode normalizes with per-channel batch statistics and updates the
/// running buffers in place; eval mode normalizes with the running buffers.
/// The caller guards eval-before-first-update.
template <typename S>
Tensor<S> batchnorm2d(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gamma,
                      const Tensor<S>& beta, Tensor<S>& running_mean,
                      Tensor<S>& running_var, bool training, S momentum, S eps);

// ---- activations -----------------------------------------------------------

template <typename S>
Tensor<S> relu(Tape<S>* tape, const Tensor<S>& x);
template <typename S>
Tensor<S> sigmoid(Tape<S>* tape, const Tensor<S>& x);
/// Softmax over the channel axis, per (n,h,w) pixel.
template <typename S>
Tensor<S> softmax_channels(Tape<S>* tape, const Tensor<S>& x);
/// Natural log; inputs must be positive (clamp first).
template <typename S>
Tensor<S> log(Tape<S>* tape, const Tensor<S>& x);

// ---- affine ----------------------------------------------------------------

/// x: [N,Cin], w: [Cout,Cin], b: [Cout] -> [N,Cout].
template <typename S>
Tensor<S> linear(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& w,
                 const Tensor<S>& b);

/// Multiplies each channel of x [N,C,H,W] by its coefficient s [N,C].
template <typename S>
Tensor<S> scale_channels(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& s);

// ---- reductions ------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(Tape<S>* tape, const Tensor<S>& x);  // -> [1]

/// [N,C,H,W] -> [C], summing over batch and spatial dims.
template <typename S>
Tensor<S> sum_channelwise(Tape<S>* tape, const Tensor<S>& x);

namespace detail {
template <typename S>
void check_finite(const Tensor<S>& t, const char* op);
int resolve_threads(int64_t items);
}  // namespace detail

}  // namespace saunet
