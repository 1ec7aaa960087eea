#pragma once

// Finite-difference verification of every differentiable operation and of
// the three model variants, in 64-bit precision.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "merob/tensor.hpp"

namespace merob {

struct GradCheckOptions {
  std::size_t n_seeds = 10;
  double step = 1e-3;
  double tolerance = 1e-4;
  std::uint64_t seed_base = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;  // worst over seeds and input tensors
  std::size_t n_checks = 0;    // (seed, input tensor) pairs compared
  /// Instances redrawn because a ReLU/max-pool switch fell inside the
  /// difference stencil (detected by comparing step and step/2 estimates).
  std::size_t redraws = 0;
  bool non_smooth = false;  // some seed never produced a smooth instance
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool pass() const;
  /// One line per op: name, max relative error, verdict.
  std::string summary() const;
};

/// Relative error between an analytic and a numeric gradient of one tensor:
/// ||a - n|| / max(||a||, ||n||); 0 when both vanish.
double gradient_rel_error(std::span<const double> analytic, std::span<const double> numeric);

using ScalarFn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Central differences of fn with respect to every element of every input;
/// returns the per-input relative error against backward(). When `smooth` is
/// given, it is cleared if the step and step/2 estimates disagree, i.e. the
/// function is not smooth on the stencil.
std::vector<double> check_gradients(const ScalarFn& fn, const std::vector<TensorD>& inputs,
                                    double step, bool* smooth = nullptr);

GradCheckReport run_gradcheck(const GradCheckOptions& opts = {});

}  // namespace merob
