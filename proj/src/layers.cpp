#include "saunet/layers.hpp"

namespace saunet {

template <typename S>
Conv2d<S>::Conv2d(ParamRegistry<S>& reg, const std::string& prefix,
                  std::mt19937_64& rng, int in_ch, int out_ch, int kernel, int stride_,
                  int pad_)
    : stride(stride_), pad(pad_) {
  w = reg.create(prefix + ".w", {out_ch, in_ch, kernel, kernel}, true);
  b = reg.create(prefix + ".b", {out_ch}, true);
  fill_he_normal(w, in_ch * kernel * kernel, rng);
}

template <typename S>
Tensor<S> Conv2d<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  return conv2d(ctx.tape, x, w, b, stride, pad);
}

template <typename S>
TransposeConv2dLayer<S>::TransposeConv2dLayer(ParamRegistry<S>& reg,
                                              const std::string& prefix,
                                              std::mt19937_64& rng, int in_ch,
                                              int out_ch, int kernel, int stride_)
    : stride(stride_) {
  w = reg.create(prefix + ".w", {in_ch, out_ch, kernel, kernel}, true);
  b = reg.create(prefix + ".b", {out_ch}, true);
  fill_he_normal(w, in_ch * kernel * kernel, rng);
}

template <typename S>
Tensor<S> TransposeConv2dLayer<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  return transpose_conv2d(ctx.tape, x, w, b, stride);
}

template <typename S>
BatchNorm2d<S>::BatchNorm2d(ParamRegistry<S>& reg, const std::string& prefix,
                            int channels)
    : name(prefix) {
  gamma = reg.create(prefix + ".gamma", {channels}, true);
  beta = reg.create(prefix + ".beta", {channels}, true);
  running_mean = reg.create(prefix + ".running_mean", {channels}, false);
  running_var = reg.create(prefix + ".running_var", {channels}, false);
  batches_tracked = reg.create(prefix + ".batches", {1}, false);
  fill_constant(gamma, S(1));
  fill_constant(running_var, S(1));
}

template <typename S>
Tensor<S> BatchNorm2d<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  if (!ctx.training && batches_tracked.raw()[0] == S(0))
    fail("batch norm '", name, "': eval mode before any running-stat update");
  if (ctx.training) batches_tracked.raw()[0] += S(1);
  return batchnorm2d(ctx.tape, x, gamma, beta, running_mean, running_var, ctx.training,
                     momentum, eps);
}

template <typename S>
ConvNorm<S>::ConvNorm(ParamRegistry<S>& reg, const std::string& prefix,
                      std::mt19937_64& rng, int in_ch, int out_ch, int kernel,
                      int stride, int pad)
    : conv(reg, prefix + ".conv", rng, in_ch, out_ch, kernel, stride, pad),
      bn(reg, prefix + ".bn", out_ch) {}

template <typename S>
Tensor<S> ConvNorm<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  return relu(ctx.tape, bn.forward(ctx, conv.forward(ctx, x)));
}

template <typename S>
LinearLayer<S>::LinearLayer(ParamRegistry<S>& reg, const std::string& prefix,
                            std::mt19937_64& rng, int in_features, int out_features) {
  w = reg.create(prefix + ".w", {out_features, in_features}, true);
  b = reg.create(prefix + ".b", {out_features}, true);
  fill_he_normal(w, in_features, rng);
}

template <typename S>
Tensor<S> LinearLayer<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  return linear(ctx.tape, x, w, b);
}

template <typename S>
DenseBlock<S>::DenseBlock(ParamRegistry<S>& reg, const std::string& prefix,
                          std::mt19937_64& rng, int in_ch, int n, int k) {
  if (n < 1) fail("dense block '", prefix, "': layer count must be >= 1, got ", n);
  layers_.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    layers_.emplace_back(reg, prefix + ".layer" + std::to_string(i), rng, in_ch + i * k,
                         k, 3, 1, 1);
  out_channels_ = in_ch + n * k;
}

template <typename S>
Tensor<S> DenseBlock<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  Tensor<S> cat = x;
  for (const auto& layer : layers_) {
    Tensor<S> y = layer.forward(ctx, cat);
    cat = concat_channels(ctx.tape, {cat, y});
  }
  return cat;
}

template <typename S>
TransitionBlock<S>::TransitionBlock(ParamRegistry<S>& reg, const std::string& prefix,
                                    std::mt19937_64& rng, int in_ch) {
  if (in_ch % 2 != 0)
    fail("transition block '", prefix, "': channel count ", in_ch, " must be even");
  reduce_ = ConvNorm<S>(reg, prefix + ".reduce", rng, in_ch, in_ch / 2, 1, 1, 0);
  out_channels_ = in_ch / 2;
}

template <typename S>
Tensor<S> TransitionBlock<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  return avgpool2d(ctx.tape, reduce_.forward(ctx, x));
}

template <typename S>
ResidualBlock<S>::ResidualBlock(ParamRegistry<S>& reg, const std::string& prefix,
                                std::mt19937_64& rng, int channels)
    : cn1_(reg, prefix + ".cn1", rng, channels, channels, 3, 1, 1),
      cn2_(reg, prefix + ".cn2", rng, channels, channels, 3, 1, 1) {}

template <typename S>
Tensor<S> ResidualBlock<S>::forward(const Ctx<S>& ctx, const Tensor<S>& x) const {
  return add(ctx.tape, x, cn2_.forward(ctx, cn1_.forward(ctx, x)));
}

template <typename S>
SqueezeExcitation<S>::SqueezeExcitation(ParamRegistry<S>& reg, const std::string& prefix,
                                        std::mt19937_64& rng, int channels,
                                        int reduction) {
  if (reduction < 1 || channels % reduction != 0)
    fail("squeeze-excitation '", prefix, "': ", channels,
         " channels not divisible by reduction ", reduction);
  fc1_ = LinearLayer<S>(reg, prefix + ".fc1", rng, channels, channels / reduction);
  fc2_ = LinearLayer<S>(reg, prefix + ".fc2", rng, channels / reduction, channels);
}

template <typename S>
typename SqueezeExcitation<S>::Result SqueezeExcitation<S>::forward(
    const Ctx<S>& ctx, const Tensor<S>& x) const {
  Tensor<S> squeezed = global_avg_pool(ctx.tape, x);
  Tensor<S> hidden = relu(ctx.tape, fc1_.forward(ctx, squeezed));
  Tensor<S> scales = sigmoid(ctx.tape, fc2_.forward(ctx, hidden));
  return {scale_channels(ctx.tape, x, scales), scales};
}

template <typename S>
GatedConvLayer<S>::GatedConvLayer(ParamRegistry<S>& reg, const std::string& prefix,
                                  std::mt19937_64& rng, int shape_ch, int texture_ch)
    : texture_reduce_(reg, prefix + ".texture_reduce", rng, texture_ch, 1, 1, 1, 0),
      gate_(reg, prefix + ".gate", rng, shape_ch + 1, 1, 1, 1, 0) {}

template <typename S>
typename GatedConvLayer<S>::Result GatedConvLayer<S>::forward(
    const Ctx<S>& ctx, const Tensor<S>& s_l, const Tensor<S>& t_t) const {
  if (s_l.dim(0) != t_t.dim(0))
    fail("gated conv layer: batch mismatch between shape stream ",
         shape_str(s_l.shape()), " and texture features ", shape_str(t_t.shape()));
  Tensor<S> t = t_t;
  if (t.dim(2) != s_l.dim(2) || t.dim(3) != s_l.dim(3))
    t = bilinear_upsample(ctx.tape, t, s_l.dim(2), s_l.dim(3));
  Tensor<S> reduced = texture_reduce_.forward(ctx, t);
  Tensor<S> alpha =
      sigmoid(ctx.tape, gate_.forward(ctx, concat_channels(ctx.tape, {s_l, reduced})));
  return {mul(ctx.tape, s_l, alpha), alpha};
}

template <typename S>
SpatialAttentionPath<S>::SpatialAttentionPath(ParamRegistry<S>& reg,
                                              const std::string& prefix,
                                              std::mt19937_64& rng, int channels)
    : channels_(channels) {
  if (channels % 2 != 0)
    fail("spatial attention '", prefix, "': channel count ", channels, " must be even");
  reduce_ = ConvNorm<S>(reg, prefix + ".reduce", rng, channels, channels / 2, 1, 1, 0);
  to_map_ = Conv2d<S>(reg, prefix + ".to_map", rng, channels / 2, 1, 1, 1, 0);
}

template <typename S>
typename SpatialAttentionPath<S>::Result SpatialAttentionPath<S>::forward(
    const Ctx<S>& ctx, const Tensor<S>& x) const {
  Tensor<S> raw =
      sigmoid(ctx.tape, to_map_.forward(ctx, reduce_.forward(ctx, x)));
  return {stack_channels(ctx.tape, raw, channels_), raw};
}

template <typename S>
DualAttentionDecoder<S>::DualAttentionDecoder(ParamRegistry<S>& reg,
                                              const std::string& prefix,
                                              std::mt19937_64& rng, int skip_ch,
                                              int below_ch, int out_ch,
                                              int se_reduction)
    : up_(reg, prefix + ".up", rng, below_ch, out_ch, 2, 2),
      fuse_(reg, prefix + ".fuse", rng, skip_ch + out_ch, out_ch, 3, 1, 1),
      se_(reg, prefix + ".se", rng, out_ch, se_reduction),
      spatial_(reg, prefix + ".spatial", rng, out_ch) {}

template <typename S>
typename DualAttentionDecoder<S>::Result DualAttentionDecoder<S>::forward(
    const Ctx<S>& ctx, const Tensor<S>& skip, const Tensor<S>& below) const {
  Tensor<S> up = up_.forward(ctx, below);
  if (up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3))
    fail("decoder: spatial mismatch after upsampling, skip ", shape_str(skip.shape()),
         " vs upsampled ", shape_str(up.shape()));
  Tensor<S> x = fuse_.forward(ctx, concat_channels(ctx.tape, {skip, up}));
  typename SqueezeExcitation<S>::Result channel = se_.forward(ctx, x);
  typename SpatialAttentionPath<S>::Result spatial = spatial_.forward(ctx, x);
  Tensor<S> out = mul(ctx.tape, add_scalar(ctx.tape, spatial.stacked, S(1)), channel.out);
  return {out, spatial.raw, channel.out};
}

#define SAUNET_INSTANTIATE_LAYERS(S)      \
  template class Conv2d<S>;               \
  template class TransposeConv2dLayer<S>; \
  template class BatchNorm2d<S>;          \
  template class ConvNorm<S>;             \
  template class LinearLayer<S>;          \
  template class DenseBlock<S>;           \
  template class TransitionBlock<S>;      \
  template class ResidualBlock<S>;        \
  template class SqueezeExcitation<S>;    \
  template class GatedConvLayer<S>;       \
  template class SpatialAttentionPath<S>; \
  template class DualAttentionDecoder<S>;

SAUNET_INSTANTIATE_LAYERS(float)
SAUNET_INSTANTIATE_LAYERS(double)

#undef SAUNET_INSTANTIATE_LAYERS

}  // namespace saunet
