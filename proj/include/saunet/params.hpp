#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "saunet/tensor.hpp"

namespace saunet {

/// One named tensor inside a "SAUC" checkpoint container.
struct SaucEntry {
  std::string name;
  std::vector<int> dims;
  std::vector<float> values;
};

/// Container layout: magic "SAUC", u32 version, u32 count, then per entry
/// u32 name length + UTF-8 name + u32 ndim + u32 dims[] + little-endian f32
/// payload.
void sauc_write(const std::string& path, const std::vector<SaucEntry>& entries);
std::vector<SaucEntry> sauc_read(const std::string& path);

/// Ordered map of hierarchical parameter names to tensors: trainable weights
/// plus non-trainable buffers (BN running stats, step counters).
template <typename S>
class ParamRegistry {
 public:
  Tensor<S> create(const std::string& name, std::vector<int> shape, bool trainable) {
    if (by_name_.count(name)) fail("duplicate parameter name '", name, "'");
    Tensor<S> t = Tensor<S>::zeros(std::move(shape), trainable);
    by_name_.emplace(name, Entry{t, trainable});
    order_.push_back(name);
    return t;
  }

  bool has(const std::string& name) const { return by_name_.count(name) != 0; }

  Tensor<S> get(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) fail("unknown parameter '", name, "'");
    return it->second.tensor;
  }

  bool trainable(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) fail("unknown parameter '", name, "'");
    return it->second.trainable;
  }

  const std::vector<std::string>& names() const { return order_; }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (const auto& name : order_) {
      const Entry& e = by_name_.at(name);
      if (e.trainable) n += e.tensor.numel();
    }
    return n;
  }

  void zero_grad() {
    for (const auto& name : order_) {
      Entry& e = by_name_.at(name);
      if (e.trainable) e.tensor.zero_grad();
    }
  }

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  std::vector<SaucEntry> to_entries() const {
    std::vector<SaucEntry> out;
    out.reserve(order_.size());
    for (const auto& name : order_) {
      const Tensor<S>& t = by_name_.at(name).tensor;
      SaucEntry e;
      e.name = name;
      e.dims = t.shape();
      e.values.assign(t.data().begin(), t.data().end());
      out.push_back(std::move(e));
    }
    return out;
  }

  /// Copies matching entries into the registered tensors. Every registered
  /// name must be present; entries without a registered tensor are an error
  /// unless allow_extra is set (used when optimizer state shares the file).
  void load_entries(const std::vector<SaucEntry>& entries, bool allow_extra) {
    std::unordered_map<std::string, const SaucEntry*> index;
    for (const auto& e : entries) index.emplace(e.name, &e);
    for (const auto& name : order_) {
      auto it = index.find(name);
      if (it == index.end()) fail("checkpoint is missing parameter '", name, "'");
      Tensor<S> t = by_name_.at(name).tensor;
      const SaucEntry& e = *it->second;
      if (e.dims != t.shape())
        fail("checkpoint parameter '", name, "' has shape ", shape_str(e.dims),
             ", expected ", shape_str(t.shape()));
      for (int64_t i = 0; i < t.numel(); ++i) t.raw()[i] = static_cast<S>(e.values[static_cast<size_t>(i)]);
      index.erase(it);
    }
    if (!allow_extra && !index.empty())
      fail("checkpoint holds ", index.size(), " unknown parameter(s), e.g. '",
           index.begin()->first, "'");
  }

 private:
  struct Entry {
    Tensor<S> tensor;
    bool trainable;
  };
  std::unordered_map<std::string, Entry> by_name_;
  std::vector<std::string> order_;
  bool training_ = false;
};

/// Checksum over names, shapes and raw values; used for reproducibility and
/// no-mutation assertions.
template <typename S>
uint64_t registry_checksum(const ParamRegistry<S>& reg) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : reg.names()) {
    h = fnv1a(name.data(), name.size(), h);
    Tensor<S> t = reg.get(name);
    h = fnv1a(t.raw(), static_cast<size_t>(t.numel()) * sizeof(S), h);
  }
  return h;
}

/// He-style fan-in scaled normal draw used for conv and linear weights.
template <typename S>
void fill_he_normal(Tensor<S> t, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<S> dist(S(0), std::sqrt(S(2) / static_cast<S>(fan_in)));
  for (S& v : t.data()) v = dist(rng);
}

template <typename S>
void fill_constant(Tensor<S> t, S value) {
  for (S& v : t.data()) v = value;
}

}  // namespace saunet
