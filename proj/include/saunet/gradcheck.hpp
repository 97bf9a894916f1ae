#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "saunet/tape.hpp"
#include "saunet/tensor.hpp"

namespace saunet {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

/// Scalar-valued function of a set of f64 tensors; the tensors passed to
/// grad_check are the very buffers the function reads, so finite-difference
/// perturbations reach it.
using ScalarFnD =
    std::function<Tensor<double>(Tape<double>&, std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of f against central finite differences,
/// element by element, at f64. Relative error uses max(|a|,|b|,1) in the
/// denominator. Pass iff max error < tol.
GradCheckResult grad_check(const std::string& name, const ScalarFnD& f,
                           std::vector<Tensor<double>> inputs, double eps = 1e-5,
                           double tol = 1e-4);

/// Directional variant: n random unit directions over the concatenated input
/// space instead of per-element probes. Used for whole-model checks where
/// per-element probing would be too slow.
GradCheckResult grad_check_directional(const std::string& name, const ScalarFnD& f,
                                       std::vector<Tensor<double>> inputs,
                                       int n_directions, uint64_t seed,
                                       double eps = 1e-5, double tol = 1e-4);

/// The full verification suite: every differentiable op, every layer block,
/// the losses, and the end-to-end tiny network (20 random parameter
/// perturbations).
std::vector<GradCheckResult> run_standard_gradchecks(uint64_t seed);

/// One line per result: `name max_rel_err pass|fail`.
std::string format_gradcheck_report(const std::vector<GradCheckResult>& results);

// Test-input helpers (shared with the unit suites).
template <typename S>
Tensor<S> random_uniform(std::vector<int> shape, S lo, S hi, std::mt19937_64& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  std::uniform_real_distribution<S> dist(lo, hi);
  for (S& v : t.data()) v = dist(rng);
  return t;
}

/// Values spaced at least 1/(2n) apart in [0,1), shuffled; keeps pooling
/// argmaxes and order statistics stable under small FD probes.
template <typename S>
Tensor<S> random_distinct(std::vector<int> shape, std::mt19937_64& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  const int64_t n = t.numel();
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::uniform_real_distribution<S> jitter(S(0), S(0.25) / static_cast<S>(n));
  for (int64_t i = 0; i < n; ++i)
    t.raw()[i] = static_cast<S>(perm[static_cast<size_t>(i)]) / static_cast<S>(n) +
                 jitter(rng);
  return t;
}

/// Uniform magnitudes in [0.2, 1] with random signs; keeps ReLU and clamp
/// kinks away from finite-difference probes.
template <typename S>
Tensor<S> random_signed_away_from_zero(std::vector<int> shape, std::mt19937_64& rng) {
  Tensor<S> t = Tensor<S>::zeros(std::move(shape));
  std::uniform_real_distribution<S> mag(S(0.2), S(1));
  std::uniform_int_distribution<int> sign(0, 1);
  for (S& v : t.data()) v = (sign(rng) ? S(1) : S(-1)) * mag(rng);
  return t;
}

}  // namespace saunet
