#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "saunet/tensor.hpp"

namespace saunet {

/// Reverse-mode record of one training/inference pass. Ops append nodes in
/// execution order; backward() replays them once, in reverse. The tape owns
/// the intermediate tensors it recorded, so clear() releases them. A tape
/// must stay confined to one logical thread.
template <typename S>
class Tape {
 public:
  struct Node {
    const char* op;                  // backward rule id, for reports
    Tensor<S> output;
    std::vector<Tensor<S>> inputs;
    std::function<void()> backward;  // reads output.grad, accumulates into inputs
  };

  void record(const char* op, Tensor<S> output, std::vector<Tensor<S>> inputs,
              std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(output), std::move(inputs), std::move(backward)});
  }

  size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  void clear() {
    nodes_.clear();
    nodes_.shrink_to_fit();
  }

  /// Replays every recorded backward rule in reverse order. Counterpart of
  /// saunet::backward, exposed for instrumentation.
  void replay_reverse() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

 private:
  std::vector<Node> nodes_;
};

/// Seeds d loss/d loss = 1 and propagates through the tape. After the call
/// every requires_grad leaf that participated holds its gradient; leaves
/// that did not participate keep their zero-initialized grad buffer.
template <typename S>
void backward(Tensor<S> loss, Tape<S>& tape) {
  if (loss.numel() != 1)
    fail("backward expects a scalar loss, got shape ", shape_str(loss.shape()));
  if (!loss.requires_grad())
    fail("backward called on a loss that does not require grad");
  loss.grad()[0] += S(1);
  tape.replay_reverse();
}

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace saunet
