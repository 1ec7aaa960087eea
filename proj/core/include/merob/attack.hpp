#pragma once

// Untargeted sign-gradient iterative attack on a regression model:
//
//   delta_0     = 0
//   delta_{i+1} = clip_eps(delta_i + eta * sign(grad_delta L(f(x + delta_i), y)))
//
// L is measured against the ground-truth targets, so every step pushes the
// prediction away from them while |delta| stays inside the l-inf ball.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "merob/model.hpp"
#include "merob/tensor.hpp"

namespace merob {

enum class StopKind { kNone, kMseAbove, kAvgCorrBelow };

struct StopRule {
  StopKind kind = StopKind::kAvgCorrBelow;
  double threshold = -1.0;

  static StopRule none() { return {StopKind::kNone, 0.0}; }
  static StopRule mse_above(double tau) { return {StopKind::kMseAbove, tau}; }
  static StopRule avg_corr_below(double rho) { return {StopKind::kAvgCorrBelow, rho}; }

  bool operator==(const StopRule&) const = default;
};

std::string to_string(const StopRule& r);
/// Parses "none", "mse_above:<tau>" or "avg_corr_below:<rho>".
StopRule parse_stop_rule(std::string_view s);

/// Which model loss the attack ascends. kEmotion is the emotion-only MSE for
/// every variant; kTraining uses the variant's own training loss (the joint
/// loss for A2M2E) and needs mid-level targets.
enum class AttackLoss { kEmotion, kTraining };

struct AttackConfig {
  double epsilon = 0.001;
  double eta = 0.002;
  std::size_t max_iterations = 1000;
  StopRule stop = StopRule::avg_corr_below(-1.0);
  AttackLoss loss = AttackLoss::kEmotion;
  /// Freeze a sample's delta once the stop rule fires on that sample alone
  /// (mse on its row; correlation across its 8 outputs).
  bool per_sample_stop = false;
  /// Re-verify max|delta| <= epsilon after every update.
  bool check_feasibility = false;

  void validate() const;
  bool operator==(const AttackConfig&) const = default;
};

enum class StopReason { kBudget, kThreshold };
std::string_view to_string(StopReason r);

template <typename T>
struct Perturbation {
  Tensor<T> delta;
  std::size_t iterations_run = 0;
  /// Loss at delta_0 .. delta_{iterations_run}; size iterations_run + 1.
  std::vector<double> loss_trace;
  StopReason stop_reason = StopReason::kBudget;
  /// A correlation stop check met a constant prediction column.
  bool correlation_flagged = false;
};

struct StopEvaluation {
  bool fire = false;
  bool flagged = false;  // a constant column was counted as correlation 0
};

/// pred and y are row-major [rows, cols]. mse_above fires when MSE >= tau;
/// avg_corr_below fires when the mean column correlation <= rho (constant
/// columns count as 0 and set `flagged`). With a single row the correlation
/// runs across that row's outputs instead.
StopEvaluation evaluate_stop(const StopRule& rule, std::span<const double> pred,
                             std::span<const double> y, std::size_t cols);

/// Differentiable objective: maps the perturbed input to (scalar loss,
/// emotion predictions [B, 8]).
template <typename T>
using AttackObjective = std::function<std::pair<Tensor<T>, Tensor<T>>(const Tensor<T>&)>;

template <typename T>
Perturbation<T> bim_attack(const AttackObjective<T>& objective, const Tensor<T>& x,
                           const Tensor<T>& y_emotion, const AttackConfig& cfg);

/// Attack a model against ground-truth targets. y_midlevel is only read when
/// cfg.loss == kTraining for A2M2E.
template <typename T>
Perturbation<T> bim_attack(const ModelParams<T>& params, const ModelSpec& spec,
                           const Tensor<T>& x, const Tensor<T>& y_emotion, const AttackConfig& cfg,
                           const Tensor<T>* y_midlevel = nullptr);

/// 10 log10(sum x^2 / sum delta^2) in the model-input domain; +inf for an
/// all-zero delta.
double snr_db(std::span<const double> x, std::span<const double> delta);

template <typename T>
double snr_db(const Tensor<T>& x, const Tensor<T>& delta);

}  // namespace merob
