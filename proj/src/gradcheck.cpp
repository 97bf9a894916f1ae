#include "saunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "saunet/layers.hpp"
#include "saunet/losses.hpp"
#include "saunet/model.hpp"
#include "saunet/ops.hpp"

namespace saunet {

namespace {

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

// Evaluates f with recording disabled on every input.
double eval_plain(const ScalarFnD& f, std::vector<Tensor<double>>& inputs) {
  Tape<double> scratch;
  const double v = f(scratch, inputs).item();
  scratch.clear();
  return v;
}

struct GradSnapshot {
  std::vector<std::vector<double>> grads;
};

GradSnapshot autodiff_grads(const ScalarFnD& f, std::vector<Tensor<double>>& inputs) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double> tape;
  Tensor<double> loss = f(tape, inputs);
  backward(loss, tape);
  GradSnapshot snap;
  for (auto& t : inputs)
    snap.grads.emplace_back(t.grad().begin(), t.grad().end());
  tape.clear();
  for (auto& t : inputs) t.set_requires_grad(false);
  return snap;
}

}  // namespace

GradCheckResult grad_check(const std::string& name, const ScalarFnD& f,
                           std::vector<Tensor<double>> inputs, double eps, double tol) {
  GradSnapshot snap = autodiff_grads(f, inputs);
  double worst = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double saved = t.raw()[i];
      t.raw()[i] = saved + eps;
      const double lp = eval_plain(f, inputs);
      t.raw()[i] = saved - eps;
      const double lm = eval_plain(f, inputs);
      t.raw()[i] = saved;
      const double fd = (lp - lm) / (2.0 * eps);
      worst = std::max(worst, rel_err(snap.grads[ti][static_cast<size_t>(i)], fd));
    }
  }
  return {name, worst, worst < tol};
}

GradCheckResult grad_check_directional(const std::string& name, const ScalarFnD& f,
                                       std::vector<Tensor<double>> inputs,
                                       int n_directions, uint64_t seed, double eps,
                                       double tol) {
  GradSnapshot snap = autodiff_grads(f, inputs);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int dir = 0; dir < n_directions; ++dir) {
    std::vector<std::vector<double>> d(inputs.size());
    double norm = 0.0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
      d[ti].resize(static_cast<size_t>(inputs[ti].numel()));
      for (double& v : d[ti]) {
        v = normal(rng);
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    double ad = 0.0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
      Tensor<double>& t = inputs[ti];
      for (int64_t i = 0; i < t.numel(); ++i) {
        d[ti][static_cast<size_t>(i)] /= norm;
        ad += snap.grads[ti][static_cast<size_t>(i)] * d[ti][static_cast<size_t>(i)];
        t.raw()[i] += eps * d[ti][static_cast<size_t>(i)];
      }
    }
    const double lp = eval_plain(f, inputs);
    for (size_t ti = 0; ti < inputs.size(); ++ti)
      for (int64_t i = 0; i < inputs[ti].numel(); ++i)
        inputs[ti].raw()[i] -= 2.0 * eps * d[ti][static_cast<size_t>(i)];
    const double lm = eval_plain(f, inputs);
    for (size_t ti = 0; ti < inputs.size(); ++ti)
      for (int64_t i = 0; i < inputs[ti].numel(); ++i)
        inputs[ti].raw()[i] += eps * d[ti][static_cast<size_t>(i)];
    const double fd = (lp - lm) / (2.0 * eps);
    worst = std::max(worst, rel_err(ad, fd));
  }
  return {name, worst, worst < tol};
}

namespace {

using D = double;
using Tn = Tensor<double>;
using Tp = Tape<double>;

// Sum of all outputs turns any op into a scalar function.
Tn summed(Tp& tape, Tn t) { return sum_all(&tape, t); }

std::vector<GradCheckResult> op_cases(uint64_t seed) {
  std::vector<GradCheckResult> out;
  std::mt19937_64 rng(seed);
  auto u = [&](std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    return random_uniform<double>(std::move(shape), lo, hi, rng);
  };

  out.push_back(grad_check(
      "add", [](Tp& t, auto& in) { return summed(t, add(&t, in[0], in[1])); },
      {u({2, 3, 4, 4}), u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "sub", [](Tp& t, auto& in) { return summed(t, sub(&t, in[0], in[1])); },
      {u({2, 3, 4, 4}), u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "mul", [](Tp& t, auto& in) { return summed(t, mul(&t, in[0], in[1])); },
      {u({2, 3, 4, 4}), u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "mul_channel_broadcast",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[0], in[1])); },
      {u({2, 3, 4, 4}), u({2, 1, 4, 4})}));
  out.push_back(grad_check(
      "mul_scalar_broadcast",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[0], in[1])); },
      {u({2, 3, 4, 4}), u({1})}));
  out.push_back(grad_check(
      "div", [](Tp& t, auto& in) { return summed(t, div(&t, in[0], in[1])); },
      {u({2, 3, 4, 4}), u({2, 3, 4, 4}, 0.5, 1.5)}));
  out.push_back(grad_check(
      "add_scalar",
      [](Tp& t, auto& in) { return summed(t, add_scalar(&t, in[0], 0.37)); },
      {u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "scale", [](Tp& t, auto& in) { return summed(t, scale(&t, in[0], -1.7)); },
      {u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "clamp",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[1], clamp(&t, in[0], -0.5, 0.5))); },
      {random_signed_away_from_zero<double>({2, 3, 4, 4}, rng), u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "relu", [](Tp& t, auto& in) { return summed(t, relu(&t, in[0])); },
      {random_signed_away_from_zero<double>({2, 3, 4, 4}, rng)}));
  out.push_back(grad_check(
      "sigmoid",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[1], sigmoid(&t, in[0]))); },
      {u({2, 3, 4, 4}, -2.0, 2.0), u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "log", [](Tp& t, auto& in) { return summed(t, log(&t, in[0])); },
      {u({2, 3, 4, 4}, 0.3, 2.0)}));
  out.push_back(grad_check(
      "softmax_channels",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[1], softmax_channels(&t, in[0])));
      },
      {u({2, 4, 3, 3}, -2.0, 2.0), u({2, 4, 3, 3})}));
  out.push_back(grad_check(
      "concat_channels",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[2], concat_channels(&t, {in[0], in[1]})));
      },
      {u({2, 2, 4, 4}), u({2, 3, 4, 4}), u({2, 5, 4, 4})}));
  out.push_back(grad_check(
      "stack_channels",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[1], stack_channels(&t, in[0], 3)));
      },
      {u({2, 1, 4, 4}), u({2, 3, 4, 4})}));
  out.push_back(grad_check(
      "scale_channels",
      [](Tp& t, auto& in) { return summed(t, scale_channels(&t, in[0], in[1])); },
      {u({2, 3, 4, 4}), u({2, 3}, 0.1, 0.9)}));
  out.push_back(grad_check(
      "linear",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[3], linear(&t, in[0], in[1], in[2])));
      },
      {u({3, 5}), u({4, 5}), u({4}), u({3, 4})}));
  out.push_back(grad_check(
      "conv2d_s1",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[3], conv2d(&t, in[0], in[1], in[2], 1, 1)));
      },
      {u({2, 2, 5, 5}), u({3, 2, 3, 3}), u({3}), u({2, 3, 5, 5})}));
  out.push_back(grad_check(
      "conv2d_s2",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[3], conv2d(&t, in[0], in[1], in[2], 2, 0)));
      },
      {u({2, 2, 6, 6}), u({3, 2, 2, 2}), u({3}), u({2, 3, 3, 3})}));
  out.push_back(grad_check(
      "transpose_conv2d_s2",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[3], transpose_conv2d(&t, in[0], in[1], in[2], 2)));
      },
      {u({2, 3, 3, 3}), u({3, 2, 2, 2}), u({2}), u({2, 2, 6, 6})}));
  out.push_back(grad_check(
      "transpose_conv2d_s1",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[3], transpose_conv2d(&t, in[0], in[1], in[2], 1)));
      },
      {u({1, 2, 3, 3}), u({2, 2, 2, 2}), u({2}), u({1, 2, 4, 4})}));
  out.push_back(grad_check(
      "maxpool2d",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[1], maxpool2d(&t, in[0]))); },
      {random_distinct<double>({2, 2, 4, 4}, rng), u({2, 2, 2, 2})}));
  out.push_back(grad_check(
      "maxpool2d_odd",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[1], maxpool2d(&t, in[0]))); },
      {random_distinct<double>({1, 2, 5, 5}, rng), u({1, 2, 3, 3})}));
  out.push_back(grad_check(
      "avgpool2d",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[1], avgpool2d(&t, in[0]))); },
      {u({2, 2, 4, 4}), u({2, 2, 2, 2})}));
  out.push_back(grad_check(
      "avgpool2d_odd",
      [](Tp& t, auto& in) { return summed(t, mul(&t, in[1], avgpool2d(&t, in[0]))); },
      {u({1, 2, 5, 5}), u({1, 2, 3, 3})}));
  out.push_back(grad_check(
      "global_avg_pool",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[1], global_avg_pool(&t, in[0])));
      },
      {u({2, 3, 4, 4}), u({2, 3})}));
  out.push_back(grad_check(
      "bilinear_upsample",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[1], bilinear_upsample(&t, in[0], 7, 9)));
      },
      {u({2, 2, 3, 4}), u({2, 2, 7, 9})}));
  out.push_back(grad_check(
      "sum_channelwise",
      [](Tp& t, auto& in) {
        return summed(t, mul(&t, in[1], sum_channelwise(&t, in[0])));
      },
      {u({2, 3, 4, 4}), u({3})}));
  return out;
}

std::vector<GradCheckResult> norm_cases(uint64_t seed) {
  std::vector<GradCheckResult> out;
  std::mt19937_64 rng(seed + 1);
  auto u = [&](std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    return random_uniform<double>(std::move(shape), lo, hi, rng);
  };

  {
    Tn rm = Tn::zeros({3});
    Tn rv = Tn::filled({3}, 1.0);
    auto fn = [rm, rv](Tp& t, std::vector<Tn>& in) mutable {
      Tn rm_copy = rm.clone_values();
      Tn rv_copy = rv.clone_values();
      return summed(
          t, mul(&t, in[3],
                 batchnorm2d(&t, in[0], in[1], in[2], rm_copy, rv_copy, true, 0.1, 1e-5)));
    };
    out.push_back(grad_check("batchnorm2d_train", fn,
                             {u({2, 3, 4, 4}), u({3}, 0.5, 1.5), u({3}), u({2, 3, 4, 4})}));
  }
  {
    Tn rm = random_uniform<double>({3}, -0.2, 0.2, rng);
    Tn rv = random_uniform<double>({3}, 0.8, 1.2, rng);
    auto fn = [rm, rv](Tp& t, std::vector<Tn>& in) mutable {
      Tn rm_copy = rm.clone_values();
      Tn rv_copy = rv.clone_values();
      return summed(
          t, mul(&t, in[3],
                 batchnorm2d(&t, in[0], in[1], in[2], rm_copy, rv_copy, false, 0.1, 1e-5)));
    };
    out.push_back(grad_check("batchnorm2d_eval", fn,
                             {u({2, 3, 4, 4}), u({3}, 0.5, 1.5), u({3}), u({2, 3, 4, 4})}));
  }
  return out;
}

Tn onehot_labels(int n, int k, int h, int w, std::mt19937_64& rng) {
  Tn y = Tn::zeros({n, k, h, w});
  std::uniform_int_distribution<int> cls(0, k - 1);
  for (int i = 0; i < n; ++i)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx)
        y.raw()[y.at4(i, cls(rng), yy, xx)] = 1.0;
  return y;
}

std::vector<GradCheckResult> loss_cases(uint64_t seed) {
  std::vector<GradCheckResult> out;
  std::mt19937_64 rng(seed + 2);
  auto u = [&](std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    return random_uniform<double>(std::move(shape), lo, hi, rng);
  };
  Tn y = onehot_labels(2, 3, 4, 4, rng);
  out.push_back(grad_check(
      "cross_entropy",
      [y](Tp& t, std::vector<Tn>& in) { return cross_entropy(&t, in[0], y); },
      {u({2, 3, 4, 4}, -2.0, 2.0)}));
  out.push_back(grad_check(
      "dice_loss",
      [y](Tp& t, std::vector<Tn>& in) { return dice_loss(&t, in[0], y); },
      {u({2, 3, 4, 4}, 0.1, 0.9)}));
  Tn gt = Tn::zeros({2, 1, 4, 4});
  {
    std::uniform_int_distribution<int> bit(0, 1);
    for (auto& v : gt.data()) v = bit(rng);
  }
  out.push_back(grad_check(
      "edge_bce", [gt](Tp& t, std::vector<Tn>& in) { return edge_bce(&t, in[0], gt); },
      {u({2, 1, 4, 4}, -2.0, 2.0)}));
  out.push_back(grad_check(
      "total_loss",
      [y, gt](Tp& t, std::vector<Tn>& in) {
        Tn ce = cross_entropy(&t, in[0], y);
        Tn dl = dice_loss(&t, softmax_channels(&t, in[0]), y);
        Tn eb = edge_bce(&t, in[1], gt);
        return total_loss(&t, ce, dl, eb, LossWeights<double>{1.0, 1.0, 1.0});
      },
      {u({2, 3, 4, 4}, -2.0, 2.0), u({2, 1, 4, 4}, -2.0, 2.0)}));
  return out;
}

// Collects a registry's trainable tensors as grad-check inputs, appended
// after the data inputs.
std::vector<Tn> with_params(std::vector<Tn> inputs, ParamRegistry<double>& reg) {
  for (const auto& name : reg.names())
    if (reg.trainable(name)) inputs.push_back(reg.get(name));
  return inputs;
}

std::vector<GradCheckResult> block_cases(uint64_t seed) {
  std::vector<GradCheckResult> out;
  std::mt19937_64 rng(seed + 3);
  auto u = [&](std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    return random_uniform<double>(std::move(shape), lo, hi, rng);
  };

  {
    auto reg = std::make_shared<ParamRegistry<double>>();
    std::mt19937_64 prng(seed + 11);
    auto block = std::make_shared<DenseBlock<double>>(*reg, "blk", prng, 4, 2, 3);
    auto fn = [block](Tp& t, std::vector<Tn>& in) {
      Ctx<double> ctx{&t, true};
      return summed(t, block->forward(ctx, in[0]));
    };
    out.push_back(grad_check("dense_block", fn, with_params({u({2, 4, 4, 4})}, *reg)));
  }
  {
    auto reg = std::make_shared<ParamRegistry<double>>();
    std::mt19937_64 prng(seed + 12);
    auto block = std::make_shared<TransitionBlock<double>>(*reg, "blk", prng, 6);
    auto fn = [block](Tp& t, std::vector<Tn>& in) {
      Ctx<double> ctx{&t, true};
      return summed(t, block->forward(ctx, in[0]));
    };
    out.push_back(grad_check("transition_block", fn, with_params({u({2, 6, 4, 4})}, *reg)));
  }
  {
    auto reg = std::make_shared<ParamRegistry<double>>();
    std::mt19937_64 prng(seed + 13);
    auto block = std::make_shared<ResidualBlock<double>>(*reg, "blk", prng, 4);
    auto fn = [block](Tp& t, std::vector<Tn>& in) {
      Ctx<double> ctx{&t, true};
      return summed(t, block->forward(ctx, in[0]));
    };
    out.push_back(grad_check("residual_block", fn, with_params({u({1, 4, 6, 6})}, *reg)));
  }
  {
    auto reg = std::make_shared<ParamRegistry<double>>();
    std::mt19937_64 prng(seed + 14);
    auto block = std::make_shared<SqueezeExcitation<double>>(*reg, "blk", prng, 8, 4);
    auto fn = [block](Tp& t, std::vector<Tn>& in) {
      Ctx<double> ctx{&t, true};
      return summed(t, block->forward(ctx, in[0]).out);
    };
    out.push_back(grad_check("squeeze_excitation", fn,
                             with_params({u({1, 8, 4, 4})}, *reg)));
  }
  {
    auto reg = std::make_shared<ParamRegistry<double>>();
    std::mt19937_64 prng(seed + 15);
    auto block = std::make_shared<GatedConvLayer<double>>(*reg, "blk", prng, 3, 5);
    auto fn = [block](Tp& t, std::vector<Tn>& in) {
      Ctx<double> ctx{&t, true};
      auto r = block->forward(ctx, in[0], in[1]);
      return sum_all(&t, add(&t, sum_all(&t, r.gated), sum_all(&t, r.alpha)));
    };
    out.push_back(grad_check(
        "gated_conv_layer", fn,
        with_params({u({2, 3, 6, 6}), u({2, 5, 3, 3})}, *reg)));
  }
  {
    auto reg = std::make_shared<ParamRegistry<double>>();
    std::mt19937_64 prng(seed + 16);
    auto block = std::make_shared<SpatialAttentionPath<double>>(*reg, "blk", prng, 4);
    auto fn = [block](Tp& t, std::vector<Tn>& in) {
      Ctx<double> ctx{&t, true};
      return summed(t, block->forward(ctx, in[0]).stacked);
    };
    out.push_back(grad_check("spatial_attention_path", fn,
                             with_params({u({1, 4, 4, 4})}, *reg)));
  }
  {
    auto reg = std::make_shared<ParamRegistry<double>>();
    std::mt19937_64 prng(seed + 17);
    auto block =
        std::make_shared<DualAttentionDecoder<double>>(*reg, "blk", prng, 6, 4, 4, 2);
    auto fn = [block](Tp& t, std::vector<Tn>& in) {
      Ctx<double> ctx{&t, true};
      return summed(t, block->forward(ctx, in[0], in[1]).out);
    };
    out.push_back(grad_check(
        "dual_attention_decoder", fn,
        with_params({u({2, 6, 6, 6}), u({2, 4, 3, 3})}, *reg)));
  }
  return out;
}

GradCheckResult model_case(uint64_t seed) {
  ModelConfig cfg = ModelConfig::tiny();
  auto model = std::make_shared<Model<double>>(cfg, seed + 21);
  std::mt19937_64 rng(seed + 22);
  Tn x = random_uniform<double>({2, 1, 16, 16}, -1.0, 1.0, rng);
  Tn canny = Tn::zeros({2, 1, 16, 16});
  for (auto& v : canny.data()) v = (rng() & 1) ? 1.0 : 0.0;
  Tn y = onehot_labels(2, cfg.num_classes, 16, 16, rng);
  Tn gt = Tn::zeros({2, 1, 16, 16});
  for (auto& v : gt.data()) v = (rng() & 1) ? 1.0 : 0.0;

  auto fn = [model, x, canny, y, gt](Tp& t, std::vector<Tn>&) {
    auto out = model->forward(x, canny, true, &t);
    Tn ce = cross_entropy(&t, out.seg_logits, y);
    Tn dl = dice_loss(&t, softmax_channels(&t, out.seg_logits), y);
    Tn eb = edge_bce(&t, out.edge_logits, gt);
    return total_loss(&t, ce, dl, eb, LossWeights<double>{1.0, 1.0, 1.0});
  };
  std::vector<Tn> params;
  for (const auto& name : model->registry().names())
    if (model->registry().trainable(name)) params.push_back(model->registry().get(name));
  return grad_check_directional("saunet_tiny_end_to_end", fn, params, 20, seed + 23);
}

}  // namespace

std::vector<GradCheckResult> run_standard_gradchecks(uint64_t seed) {
  std::vector<GradCheckResult> all;
  for (auto& r : op_cases(seed)) all.push_back(std::move(r));
  for (auto& r : norm_cases(seed)) all.push_back(std::move(r));
  for (auto& r : loss_cases(seed)) all.push_back(std::move(r));
  for (auto& r : block_cases(seed)) all.push_back(std::move(r));
  all.push_back(model_case(seed));
  return all;
}

std::string format_gradcheck_report(const std::vector<GradCheckResult>& results) {
  std::ostringstream os;
  for (const auto& r : results)
    os << r.name << " " << r.max_rel_err << " " << (r.pass ? "pass" : "fail") << "\n";
  return os.str();
}

}  // namespace saunet
