#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "saunet/common.hpp"

namespace saunet {

enum class Dtype { F32, F64 };

template <typename S>
constexpr Dtype dtype_of() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? Dtype::F32 : Dtype::F64;
}

inline int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) fail("non-positive extent in shape ", shape_str(shape));
    n *= d;
  }
  return n;
}

namespace detail {

template <typename S>
struct TensorNode {
  std::vector<int> shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major N-D array of f32 or f64 scalars. A Tensor is a cheap
/// shared handle: copies alias the same buffer. Values are immutable once an
/// op has consumed them; only the grad buffer is accumulated into.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, S value, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->data.assign(static_cast<size_t>(shape_numel(t.node_->shape)), value);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->grad.assign(t.node_->data.size(), S(0));
    return t;
  }

  static Tensor from_data(std::vector<int> shape, std::vector<S> data,
                          bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      fail("tensor data length ", data.size(), " does not match shape ", shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->grad.assign(t.node_->data.size(), S(0));
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  Dtype dtype() const { return dtype_of<S>(); }

  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  std::span<S> data() { return node_->data; }
  std::span<const S> data() const { return node_->data; }
  S* raw() { return node_->data.data(); }
  const S* raw() const { return node_->data.data(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on && node_->grad.size() != node_->data.size())
      node_->grad.assign(node_->data.size(), S(0));
    if (!on) node_->grad.clear();
  }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<S> grad() {
    if (!has_grad()) fail("tensor has no grad buffer");
    return node_->grad;
  }
  std::span<const S> grad() const {
    if (!has_grad()) fail("tensor has no grad buffer");
    return node_->grad;
  }
  S* grad_raw() { return node_->grad.data(); }

  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  S item() const {
    if (numel() != 1) fail("item() requires a scalar tensor, got ", shape_str(shape()));
    return node_->data[0];
  }

  /// Flat index for an NCHW coordinate; only valid on 4-d tensors.
  int64_t at4(int n, int c, int h, int w) const {
    const auto& s = node_->shape;
    return ((static_cast<int64_t>(n) * s[1] + c) * s[2] + h) * s[3] + w;
  }

  bool same_shape(const Tensor& other) const { return node_->shape == other.node_->shape; }

  /// Deep copy of values (grad and autograd state not carried over).
  Tensor clone_values(bool requires_grad = false) const {
    return from_data(node_->shape, node_->data, requires_grad);
  }

  /// Identity of the underlying buffer; stable for a tensor's lifetime.
  const void* id() const { return node_.get(); }

 private:
  std::shared_ptr<detail::TensorNode<S>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// True if every scalar (and grad, when present) is finite.
template <typename S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

/// Value-converting copy between f32 and f64 tensors.
template <typename To, typename From>
Tensor<To> cast_to(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>::from_data(t.shape(), std::move(out), false);
}

}  // namespace saunet
