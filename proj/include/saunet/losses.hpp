#pragma once

#include "saunet/ops.hpp"

namespace saunet {

/// Weights of the dual-task objective: lambda1*CE + lambda2*Dice + lambda3*Edge.
template <typename S>
struct LossWeights {
  S lambda1 = S(1);
  S lambda2 = S(1);
  S lambda3 = S(1);

  void validate() const {
    if (lambda1 < S(0) || lambda2 < S(0) || lambda3 < S(0))
      fail("loss weights must be nonnegative");
    if (lambda1 == S(0) && lambda2 == S(0) && lambda3 == S(0))
      fail("loss weights must not all be zero");
  }
};

/// Mean over pixels of -sum_k y_k log softmax(logits)_k, probabilities
/// clamped to [1e-7, 1-1e-7]. y must be one-hot over the channel axis.
template <typename S>
Tensor<S> cross_entropy(Tape<S>* tape, const Tensor<S>& seg_logits,
                        const Tensor<S>& y_onehot);

/// Soft Dice loss 1 - (2/K) sum_k (sum y*p + eps)/(sum y + p + eps) over
/// class channels, eps = 1e-6. Expects probabilities in [0,1].
template <typename S>
Tensor<S> dice_loss(Tape<S>* tape, const Tensor<S>& seg_probs,
                    const Tensor<S>& y_onehot);

/// Pixel-mean binary cross entropy of sigmoid(edge_logits) against a {0,1}
/// boundary map.
template <typename S>
Tensor<S> edge_bce(Tape<S>* tape, const Tensor<S>& edge_logits,
                   const Tensor<S>& boundary_gt);

/// lambda1*ce + lambda2*dice + lambda3*edge. `edge` may be undefined (shape
/// stream ablated), in which case its term is dropped.
template <typename S>
Tensor<S> total_loss(Tape<S>* tape, const Tensor<S>& ce, const Tensor<S>& dice,
                     const Tensor<S>& edge, const LossWeights<S>& w);

}  // namespace saunet
