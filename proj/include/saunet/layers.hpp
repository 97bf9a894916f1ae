#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "saunet/ops.hpp"
#include "saunet/params.hpp"
#include "saunet/tape.hpp"

namespace saunet {

/// Per-forward execution context. A null tape disables recording (pure
/// inference); training toggles batch-norm statistics.
template <typename S>
struct Ctx {
  Tape<S>* tape = nullptr;
  bool training = false;
};

template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937_64& rng,
         int in_ch, int out_ch, int kernel, int stride, int pad);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

  Tensor<S> w, b;
  int stride = 1, pad = 0;
};

template <typename S>
class TransposeConv2dLayer {
 public:
  TransposeConv2dLayer() = default;
  TransposeConv2dLayer(ParamRegistry<S>& reg, const std::string& prefix,
                       std::mt19937_64& rng, int in_ch, int out_ch, int kernel,
                       int stride);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

  Tensor<S> w, b;
  int stride = 2;
};

template <typename S>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamRegistry<S>& reg, const std::string& prefix, int channels);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

  Tensor<S> gamma, beta;
  mutable Tensor<S> running_mean, running_var, batches_tracked;
  S momentum = S(0.1);
  S eps = S(1e-5);
  std::string name;
};

/// "Normalized convolution": conv -> batch norm -> ReLU.
template <typename S>
class ConvNorm {
 public:
  ConvNorm() = default;
  ConvNorm(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937_64& rng,
           int in_ch, int out_ch, int kernel, int stride, int pad);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

  Conv2d<S> conv;
  BatchNorm2d<S> bn;
};

template <typename S>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937_64& rng,
              int in_features, int out_features);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

  Tensor<S> w, b;
};

/// n normalized 3x3 conv layers, each consuming the concatenation of the
/// block input with every prior layer output and emitting k channels.
/// Output carries in_ch + n*k channels.
template <typename S>
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937_64& rng,
             int in_ch, int n, int k);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;
  int out_channels() const { return out_channels_; }

 private:
  std::vector<ConvNorm<S>> layers_;
  int out_channels_ = 0;
};

/// Normalized 1x1 conv halving the channel count, then 2x2 stride-2 avg pool.
template <typename S>
class TransitionBlock {
 public:
  TransitionBlock() = default;
  TransitionBlock(ParamRegistry<S>& reg, const std::string& prefix,
                  std::mt19937_64& rng, int in_ch);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;
  int out_channels() const { return out_channels_; }

 private:
  ConvNorm<S> reduce_;
  int out_channels_ = 0;
};

/// R(x) = x + conv_norm(conv_norm(x)), 3x3 kernels, channel-preserving.
template <typename S>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937_64& rng,
                int channels);
  Tensor<S> forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

 private:
  ConvNorm<S> cn1_, cn2_;
};

/// Channel attention: per-channel scale in [0,1] from a squeezed descriptor
/// through a bottleneck MLP.
template <typename S>
class SqueezeExcitation {
 public:
  struct Result {
    Tensor<S> out;     // x rescaled per channel
    Tensor<S> scales;  // [N,C], for inspection
  };

  SqueezeExcitation() = default;
  SqueezeExcitation(ParamRegistry<S>& reg, const std::string& prefix,
                    std::mt19937_64& rng, int channels, int reduction);
  Result forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

 private:
  LinearLayer<S> fc1_, fc2_;
};

/// Boundary attention gate: alpha = sigmoid(1x1(concat(S_l, 1x1(T_t)))),
/// gated output = S_l elementwise-scaled by alpha. T_t is bilinearly
/// upsampled to S_l's resolution when coarser. The 1x1 convs are plain
/// (the gate ends in an explicit sigmoid).
template <typename S>
class GatedConvLayer {
 public:
  struct Result {
    Tensor<S> gated;  // [N,Cs,H,W]
    Tensor<S> alpha;  // [N,1,H,W]
  };

  GatedConvLayer() = default;
  GatedConvLayer(ParamRegistry<S>& reg, const std::string& prefix, std::mt19937_64& rng,
                 int shape_ch, int texture_ch);
  Result forward(const Ctx<S>& ctx, const Tensor<S>& s_l, const Tensor<S>& t_t) const;

 private:
  Conv2d<S> texture_reduce_;  // texture_ch -> 1
  Conv2d<S> gate_;            // shape_ch + 1 -> 1
};

/// Spatial attention: normalized 1x1 conv C->C/2, plain 1x1 conv C/2->1,
/// sigmoid; the [0,1] map is returned raw and stacked to C channels.
template <typename S>
class SpatialAttentionPath {
 public:
  struct Result {
    Tensor<S> stacked;  // [N,C,H,W]
    Tensor<S> raw;      // [N,1,H,W]
  };

  SpatialAttentionPath() = default;
  SpatialAttentionPath(ParamRegistry<S>& reg, const std::string& prefix,
                       std::mt19937_64& rng, int channels);
  Result forward(const Ctx<S>& ctx, const Tensor<S>& x) const;

 private:
  ConvNorm<S> reduce_;
  Conv2d<S> to_map_;
  int channels_ = 0;
};

/// Decoder block: upsample the coarser feature map with a 2x2 stride-2
/// transpose conv, concat with the skip, run a normalized 3x3 conv, then
/// fuse channel and spatial attention as (F_s + 1) * F_c.
template <typename S>
class DualAttentionDecoder {
 public:
  struct Result {
    Tensor<S> out;      // [N,out_ch,H,W]
    Tensor<S> spatial;  // [N,1,H,W] raw spatial attention map
    Tensor<S> channel;  // [N,out_ch,H,W] channel-attention path output F_c
  };

  DualAttentionDecoder() = default;
  DualAttentionDecoder(ParamRegistry<S>& reg, const std::string& prefix,
                       std::mt19937_64& rng, int skip_ch, int below_ch, int out_ch,
                       int se_reduction);
  Result forward(const Ctx<S>& ctx, const Tensor<S>& skip, const Tensor<S>& below) const;

 private:
  TransposeConv2dLayer<S> up_;
  ConvNorm<S> fuse_;
  SqueezeExcitation<S> se_;
  SpatialAttentionPath<S> spatial_;
};

}  // namespace saunet
