#include "saunet/losses.hpp"

namespace saunet {

namespace {

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    fail(op, ": shape mismatch between ", shape_str(a.shape()), " and ",
         shape_str(b.shape()));
}

template <typename S>
void require_binary(const char* op, const Tensor<S>& t) {
  for (S v : t.data())
    if (v != S(0) && v != S(1)) fail(op, ": ground truth must be binary, found ", v);
}

}  // namespace

template <typename S>
Tensor<S> cross_entropy(Tape<S>* tape, const Tensor<S>& seg_logits,
                        const Tensor<S>& y_onehot) {
  require_same_shape("cross_entropy", seg_logits, y_onehot);
  require_binary("cross_entropy", y_onehot);
  const S lo = S(1e-7), hi = S(1) - S(1e-7);
  Tensor<S> p = softmax_channels(tape, seg_logits);
  Tensor<S> lp = log(tape, clamp(tape, p, lo, hi));
  Tensor<S> picked = mul(tape, y_onehot, lp);
  const int64_t pixels = seg_logits.numel() / seg_logits.dim(1);
  return scale(tape, sum_all(tape, picked), S(-1) / static_cast<S>(pixels));
}

template <typename S>
Tensor<S> dice_loss(Tape<S>* tape, const Tensor<S>& seg_probs,
                    const Tensor<S>& y_onehot) {
  require_same_shape("dice_loss", seg_probs, y_onehot);
  const S eps = S(1e-6);
  const int k = seg_probs.dim(1);
  Tensor<S> inter = sum_channelwise(tape, mul(tape, y_onehot, seg_probs));
  Tensor<S> denom = sum_channelwise(tape, add(tape, y_onehot, seg_probs));
  Tensor<S> ratio =
      div(tape, add_scalar(tape, inter, eps), add_scalar(tape, denom, eps));
  Tensor<S> summed = sum_all(tape, ratio);
  return add_scalar(tape, scale(tape, summed, S(-2) / static_cast<S>(k)), S(1));
}

template <typename S>
Tensor<S> edge_bce(Tape<S>* tape, const Tensor<S>& edge_logits,
                   const Tensor<S>& boundary_gt) {
  require_same_shape("edge_bce", edge_logits, boundary_gt);
  require_binary("edge_bce", boundary_gt);
  const S lo = S(1e-7), hi = S(1) - S(1e-7);
  Tensor<S> q = sigmoid(tape, edge_logits);
  Tensor<S> log_q = log(tape, clamp(tape, q, lo, hi));
  Tensor<S> one_minus_q = add_scalar(tape, scale(tape, q, S(-1)), S(1));
  Tensor<S> log_not_q = log(tape, clamp(tape, one_minus_q, lo, hi));
  // boundary_gt is constant, so (1 - gt) can be built outside the graph
  Tensor<S> not_gt = Tensor<S>::zeros(boundary_gt.shape());
  for (int64_t i = 0; i < boundary_gt.numel(); ++i)
    not_gt.raw()[i] = S(1) - boundary_gt.raw()[i];
  Tensor<S> term =
      add(tape, mul(tape, boundary_gt, log_q), mul(tape, not_gt, log_not_q));
  return scale(tape, sum_all(tape, term), S(-1) / static_cast<S>(edge_logits.numel()));
}

template <typename S>
Tensor<S> total_loss(Tape<S>* tape, const Tensor<S>& ce, const Tensor<S>& dice,
                     const Tensor<S>& edge, const LossWeights<S>& w) {
  w.validate();
  Tensor<S> out = add(tape, scale(tape, ce, w.lambda1), scale(tape, dice, w.lambda2));
  if (edge.defined()) out = add(tape, out, scale(tape, edge, w.lambda3));
  return out;
}

#define SAUNET_INSTANTIATE_LOSSES(S)                                                 \
  template Tensor<S> cross_entropy<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&); \
  template Tensor<S> dice_loss<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);     \
  template Tensor<S> edge_bce<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&);      \
  template Tensor<S> total_loss<S>(Tape<S>*, const Tensor<S>&, const Tensor<S>&,     \
                                   const Tensor<S>&, const LossWeights<S>&);

SAUNET_INSTANTIATE_LOSSES(float)
SAUNET_INSTANTIATE_LOSSES(double)

#undef SAUNET_INSTANTIATE_LOSSES

}  // namespace saunet
