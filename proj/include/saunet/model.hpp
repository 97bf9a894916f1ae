#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "saunet/layers.hpp"

namespace saunet {

/// Hyperparameters of one network instance. Presets: "tiny" (desk scale)
/// and "dense121" (the full-size encoder plan).
struct ModelConfig {
  int num_classes = 4;       // including background
  int input_channels = 1;
  std::vector<int> encoder_blocks = {2, 2, 2, 2};  // layers per dense block
  int growth = 8;            // channels added per dense layer
  int stem_channels = 16;
  int shape_stream_width = 16;
  std::vector<int> decoder_channels = {32, 24, 16};  // coarse -> fine
  int bridge_channels = 32;
  int se_reduction = 4;
  bool with_shape_stream = true;
  std::string preset;

  static ModelConfig tiny();
  static ModelConfig dense121();
  static ModelConfig from_preset(const std::string& name);

  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

/// Attention maps captured during one forward pass; every value is in [0,1].
template <typename S>
struct AttentionBundle {
  std::vector<Tensor<S>> alphas;        // per gated layer, full resolution
  std::vector<Tensor<S>> spatial_maps;  // per decoder, coarse -> fine
  Tensor<S> shape_map;                  // final shape-stream map, pre-fusion
};

template <typename S>
struct ForwardOutput {
  Tensor<S> seg_logits;   // [N,K,H,W]
  Tensor<S> edge_logits;  // [N,1,H,W]; undefined when the shape stream is off
  AttentionBundle<S> attn;
  // Spatial dims of every shape-stream intermediate, for structural audits.
  std::vector<std::pair<int, int>> shape_stream_dims;
};

/// The assembled network: dense encoder, full-resolution gated shape stream,
/// dual-attention decoder cascade, and the shape/texture fusion head.
template <typename S>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);

  /// x: [N,input_channels,H,W] with H,W divisible by 8; canny: [N,1,H,W]
  /// edge channel prepared by the data pipeline.
  ForwardOutput<S> forward(const Tensor<S>& x, const Tensor<S>& canny, bool training,
                           Tape<S>* tape) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry<S>& registry() { return registry_; }
  const ParamRegistry<S>& registry() const { return registry_; }

  int64_t count_params() const { return registry_.trainable_count(); }
  /// (block name, trainable parameter count) in architecture order.
  std::vector<std::pair<std::string, int64_t>> param_blocks() const;
  std::string summarize() const;

  int64_t num_forward_passes() const { return forward_count_; }

 private:
  ModelConfig cfg_;
  mutable ParamRegistry<S> registry_;
  mutable int64_t forward_count_ = 0;

  ConvNorm<S> stem_;
  std::vector<DenseBlock<S>> encoders_;
  std::vector<TransitionBlock<S>> transitions_;
  ConvNorm<S> bridge_;
  std::vector<DualAttentionDecoder<S>> decoders_;  // coarse -> fine
  Conv2d<S> shape_proj_;
  std::vector<ResidualBlock<S>> shape_res_;
  std::vector<GatedConvLayer<S>> shape_gates_;
  Conv2d<S> shape_head_;
  ConvNorm<S> fusion_;
  Conv2d<S> classifier_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

}  // namespace saunet
