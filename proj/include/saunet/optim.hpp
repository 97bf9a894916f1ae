#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saunet/params.hpp"

namespace saunet {

template <typename S>
struct RAdamConfig {
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S weight_decay = S(0);
  S eps = S(1e-8);
};

/// Rectified Adam with decoupled weight decay. The variance-rectified
/// adaptive step is applied once the rectification term rho_t exceeds 4;
/// earlier steps fall back to bias-corrected momentum.
template <typename S>
class RAdam {
 public:
  RAdam() = default;
  RAdam(ParamRegistry<S>& reg, RAdamConfig<S> cfg);

  /// One update from the gradients currently held by the parameters.
  void step(S lr);

  int64_t step_count() const { return t_; }
  size_t num_params() const { return params_.size(); }
  const RAdamConfig<S>& config() const { return cfg_; }

  /// State entries named optim.m.<param>, optim.v.<param>, optim.step for
  /// embedding into a SAUC checkpoint.
  std::vector<SaucEntry> to_entries() const;
  void load_entries(const std::vector<SaucEntry>& entries);

 private:
  RAdamConfig<S> cfg_;
  int64_t t_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<S>> params_, m_, v_;
};

/// lr0 * gamma^epoch; gamma must be in (0, 1].
double lr_schedule(double lr0, double gamma, int epoch);

}  // namespace saunet
