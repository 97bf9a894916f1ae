#include "saunet/model.hpp"

#include <map>
#include <sstream>

#include <json.hpp>

namespace saunet {

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.num_classes = 4;
  c.input_channels = 1;
  c.encoder_blocks = {2, 2, 2, 2};
  c.growth = 8;
  c.stem_channels = 16;
  c.shape_stream_width = 16;
  c.decoder_channels = {32, 24, 16};
  c.bridge_channels = 32;
  c.se_reduction = 4;
  c.preset = "tiny";
  return c;
}

ModelConfig ModelConfig::dense121() {
  ModelConfig c;
  c.num_classes = 4;
  c.input_channels = 1;
  c.encoder_blocks = {6, 12, 24, 16};  // DenseNet-121 block plan
  c.growth = 32;
  c.stem_channels = 64;
  c.shape_stream_width = 32;
  c.decoder_channels = {256, 128, 64};
  c.bridge_channels = 256;
  c.se_reduction = 16;
  c.preset = "dense121";
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "tiny") return tiny();
  if (name == "dense121") return dense121();
  fail("unknown preset '", name, "' (expected tiny or dense121)");
}

void ModelConfig::validate() const {
  if (num_classes < 2) fail("config: num_classes must be >= 2, got ", num_classes);
  if (input_channels < 1) fail("config: input_channels must be >= 1");
  if (encoder_blocks.size() != 4)
    fail("config: encoder_blocks must list 4 dense blocks, got ", encoder_blocks.size());
  for (int n : encoder_blocks)
    if (n < 1) fail("config: dense block layer counts must be positive");
  if (growth < 1 || stem_channels < 1 || shape_stream_width < 1 || bridge_channels < 1)
    fail("config: widths must be positive");
  if (decoder_channels.size() != 3)
    fail("config: decoder_channels must list 3 decoder levels, got ",
         decoder_channels.size());
  int ch = stem_channels;
  for (size_t i = 0; i < 3; ++i) {
    ch += encoder_blocks[i] * growth;
    if (ch % 2 != 0)
      fail("config: dense block ", i + 1, " emits ", ch,
           " channels; transitions need an even count");
    ch /= 2;
  }
  for (int dc : decoder_channels) {
    if (dc < 2 || dc % 2 != 0)
      fail("config: decoder channels must be even and >= 2, got ", dc);
    if (se_reduction < 1 || dc % se_reduction != 0)
      fail("config: decoder channels ", dc, " not divisible by se_reduction ",
           se_reduction);
  }
}

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || it.key() == k;
    if (!ok) fail("unknown key '", it.key(), "' in ", context);
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["num_classes"] = cfg.num_classes;
  j["input_channels"] = cfg.input_channels;
  j["encoder_blocks"] = cfg.encoder_blocks;
  j["growth"] = cfg.growth;
  j["stem_channels"] = cfg.stem_channels;
  j["shape_stream_width"] = cfg.shape_stream_width;
  j["decoder_channels"] = cfg.decoder_channels;
  j["bridge_channels"] = cfg.bridge_channels;
  j["se_reduction"] = cfg.se_reduction;
  j["with_shape_stream"] = cfg.with_shape_stream;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail("invalid model config JSON: ", e.what());
  }
  check_keys(j,
             {"preset", "num_classes", "input_channels", "encoder_blocks", "growth",
              "stem_channels", "shape_stream_width", "decoder_channels",
              "bridge_channels", "se_reduction", "with_shape_stream"},
             "model config");
  ModelConfig c;
  if (j.contains("preset") && !j["preset"].get<std::string>().empty())
    c = ModelConfig::from_preset(j["preset"].get<std::string>());
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  get("num_classes", c.num_classes);
  get("input_channels", c.input_channels);
  get("encoder_blocks", c.encoder_blocks);
  get("growth", c.growth);
  get("stem_channels", c.stem_channels);
  get("shape_stream_width", c.shape_stream_width);
  get("decoder_channels", c.decoder_channels);
  get("bridge_channels", c.bridge_channels);
  get("se_reduction", c.se_reduction);
  get("with_shape_stream", c.with_shape_stream);
  c.validate();
  return c;
}

template <typename S>
Model<S>::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);

  stem_ = ConvNorm<S>(registry_, "stem", rng, cfg_.input_channels, cfg_.stem_channels, 3,
                      1, 1);
  int ch = cfg_.stem_channels;
  std::vector<int> enc_out;  // channels exiting each dense block
  encoders_.reserve(4);
  transitions_.reserve(3);
  for (int i = 0; i < 4; ++i) {
    encoders_.emplace_back(registry_, "enc" + std::to_string(i + 1), rng, ch,
                           cfg_.encoder_blocks[static_cast<size_t>(i)], cfg_.growth);
    ch = encoders_.back().out_channels();
    enc_out.push_back(ch);
    if (i < 3) {
      transitions_.emplace_back(registry_, "trans" + std::to_string(i + 1), rng, ch);
      ch = transitions_.back().out_channels();
    }
  }

  bridge_ = ConvNorm<S>(registry_, "bridge", rng, enc_out[3], cfg_.bridge_channels, 1, 1,
                        0);

  // Decoders run coarse to fine: skips from dense blocks 3, 2, 1.
  int below_ch = cfg_.bridge_channels;
  decoders_.reserve(3);
  for (int level = 0; level < 3; ++level) {
    const int skip_ch = enc_out[static_cast<size_t>(2 - level)];
    const int out_ch = cfg_.decoder_channels[static_cast<size_t>(level)];
    decoders_.emplace_back(registry_, "dec" + std::to_string(3 - level), rng, skip_ch,
                           below_ch, out_ch, cfg_.se_reduction);
    below_ch = out_ch;
  }

  if (cfg_.with_shape_stream) {
    const int cs = cfg_.shape_stream_width;
    shape_proj_ = Conv2d<S>(registry_, "shape_proj", rng, cfg_.stem_channels, cs, 1, 1, 0);
    for (int l = 0; l < 3; ++l) {
      shape_res_.emplace_back(registry_, "shape_res" + std::to_string(l + 1), rng, cs);
      shape_gates_.emplace_back(registry_, "shape_gate" + std::to_string(l + 1), rng, cs,
                                enc_out[static_cast<size_t>(l + 1)]);
    }
    shape_head_ = Conv2d<S>(registry_, "shape_head", rng, cs, 1, 1, 1, 0);
  }

  const int fused_in = cfg_.decoder_channels[2] + (cfg_.with_shape_stream ? 2 : 0);
  fusion_ = ConvNorm<S>(registry_, "fusion", rng, fused_in, cfg_.decoder_channels[2], 3,
                        1, 1);
  classifier_ = Conv2d<S>(registry_, "classifier", rng, cfg_.decoder_channels[2],
                          cfg_.num_classes, 1, 1, 0);
}

template <typename S>
ForwardOutput<S> Model<S>::forward(const Tensor<S>& x, const Tensor<S>& canny,
                                   bool training, Tape<S>* tape) const {
  if (x.ndim() != 4 || x.dim(1) != cfg_.input_channels)
    fail("forward expects x [N,", cfg_.input_channels, ",H,W], got ",
         shape_str(x.shape()));
  const int H = x.dim(2), W = x.dim(3);
  if (H % 8 != 0 || W % 8 != 0)
    fail("forward: input is ", H, "x", W,
         "; pad the input so H and W are divisible by 8");
  if (cfg_.with_shape_stream) {
    if (!canny.defined() || canny.ndim() != 4 || canny.dim(0) != x.dim(0) ||
        canny.dim(1) != 1 || canny.dim(2) != H || canny.dim(3) != W)
      fail("forward expects a canny channel [N,1,", H, ",", W, "]");
  }
  registry_.set_training(training);
  ++forward_count_;
  Ctx<S> ctx{tape, training};

  Tensor<S> stem = stem_.forward(ctx, x);
  std::vector<Tensor<S>> enc_feats;  // dense block outputs, finest first
  Tensor<S> cur = stem;
  for (int i = 0; i < 4; ++i) {
    cur = encoders_[static_cast<size_t>(i)].forward(ctx, cur);
    enc_feats.push_back(cur);
    if (i < 3) cur = transitions_[static_cast<size_t>(i)].forward(ctx, cur);
  }

  Tensor<S> below = bridge_.forward(ctx, enc_feats[3]);
  ForwardOutput<S> out;
  for (int level = 0; level < 3; ++level) {
    auto dec = decoders_[static_cast<size_t>(level)].forward(
        ctx, enc_feats[static_cast<size_t>(2 - level)], below);
    below = dec.out;
    out.attn.spatial_maps.push_back(dec.spatial);
  }

  Tensor<S> fused_in = below;
  if (cfg_.with_shape_stream) {
    Tensor<S> ss = shape_proj_.forward(ctx, stem);
    out.shape_stream_dims.push_back({ss.dim(2), ss.dim(3)});
    for (int l = 0; l < 3; ++l) {
      ss = shape_res_[static_cast<size_t>(l)].forward(ctx, ss);
      out.shape_stream_dims.push_back({ss.dim(2), ss.dim(3)});
      auto gate = shape_gates_[static_cast<size_t>(l)].forward(
          ctx, ss, enc_feats[static_cast<size_t>(l + 1)]);
      ss = gate.gated;
      out.shape_stream_dims.push_back({ss.dim(2), ss.dim(3)});
      out.attn.alphas.push_back(gate.alpha);
    }
    out.edge_logits = shape_head_.forward(ctx, ss);
    Tensor<S> edge_prob = sigmoid(ctx.tape, out.edge_logits);
    out.attn.shape_map = edge_prob;
    out.shape_stream_dims.push_back({edge_prob.dim(2), edge_prob.dim(3)});
    fused_in = concat_channels(ctx.tape, {below, edge_prob, canny});
  }
  Tensor<S> fused = fusion_.forward(ctx, fused_in);
  out.seg_logits = classifier_.forward(ctx, fused);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, int64_t>> Model<S>::param_blocks() const {
  std::vector<std::pair<std::string, int64_t>> blocks;
  std::map<std::string, size_t> index;
  for (const auto& name : registry_.names()) {
    if (!registry_.trainable(name)) continue;
    const std::string block = name.substr(0, name.find('.'));
    auto it = index.find(block);
    if (it == index.end()) {
      index.emplace(block, blocks.size());
      blocks.push_back({block, 0});
      it = index.find(block);
    }
    blocks[it->second].second += registry_.get(name).numel();
  }
  return blocks;
}

template <typename S>
std::string Model<S>::summarize() const {
  std::ostringstream os;
  os << "block            params\n";
  int64_t total = 0;
  for (const auto& [name, count] : param_blocks()) {
    os << name;
    for (size_t i = name.size(); i < 17; ++i) os << ' ';
    os << count << "\n";
    total += count;
  }
  os << "total trainable  " << total << "\n";
  return os.str();
}

template class Model<float>;
template class Model<double>;

}  // namespace saunet
