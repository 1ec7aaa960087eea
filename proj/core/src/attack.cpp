#include "merob/attack.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "merob/errors.hpp"
#include "merob/metrics.hpp"
#include "merob/ops.hpp"

namespace merob {

std::string to_string(const StopRule& r) {
  std::ostringstream os;
  os.precision(17);
  switch (r.kind) {
    case StopKind::kNone:
      return "none";
    case StopKind::kMseAbove:
      os << "mse_above:" << r.threshold;
      break;
    case StopKind::kAvgCorrBelow:
      os << "avg_corr_below:" << r.threshold;
      break;
  }
  return os.str();
}

StopRule parse_stop_rule(std::string_view s) {
  if (s == "none") return StopRule::none();
  const auto colon = s.find(':');
  if (colon == std::string_view::npos) throw ConfigError("bad stop rule '" + std::string(s) + "'");
  const auto kind = s.substr(0, colon);
  const auto num = std::string(s.substr(colon + 1));
  double v = 0.0;
  try {
    std::size_t used = 0;
    v = std::stod(num, &used);
    if (used != num.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("bad stop rule threshold '" + num + "'");
  }
  if (kind == "mse_above") return StopRule::mse_above(v);
  if (kind == "avg_corr_below") return StopRule::avg_corr_below(v);
  throw ConfigError("unknown stop rule '" + std::string(kind) + "'");
}

std::string_view to_string(StopReason r) {
  return r == StopReason::kBudget ? "budget" : "threshold";
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be >= 0");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("attack eta must be > 0");
}

StopEvaluation evaluate_stop(const StopRule& rule, std::span<const double> pred,
                             std::span<const double> y, std::size_t cols) {
  if (pred.size() != y.size() || cols == 0 || pred.size() % cols != 0) {
    throw DimensionError("evaluate_stop: prediction/target shape mismatch");
  }
  StopEvaluation ev;
  switch (rule.kind) {
    case StopKind::kNone:
      break;
    case StopKind::kMseAbove:
      ev.fire = mse(pred, y) >= rule.threshold;
      break;
    case StopKind::kAvgCorrBelow: {
      const std::size_t rows = pred.size() / cols;
      double avg = 0.0;
      if (rows >= 2) {
        const auto c = avg_correlation(pred, y, cols);
        // Constant columns count as zero correlation.
        avg = c.value * static_cast<double>(cols - c.excluded_columns.size()) /
              static_cast<double>(cols);
        ev.flagged = !c.excluded_columns.empty();
      } else if (cols >= 2) {
        const auto r = pearson(pred, y);
        avg = r.value;
        ev.flagged = !r.ok();
      } else {
        ev.flagged = true;
      }
      ev.fire = avg <= rule.threshold;
      break;
    }
  }
  return ev;
}

template <typename T>
Perturbation<T> bim_attack(const AttackObjective<T>& objective, const Tensor<T>& x,
                           const Tensor<T>& y_emotion, const AttackConfig& cfg) {
  cfg.validate();
  const auto& shape = x.shape();
  const std::size_t batch = shape.empty() ? 1 : shape[0];
  const std::size_t per_sample = batch ? x.numel() / batch : 0;
  const std::size_t cols = y_emotion.rank() == 2 ? y_emotion.dim(1) : y_emotion.numel();
  const T eps = static_cast<T>(cfg.epsilon);
  const T eta = static_cast<T>(cfg.eta);
  const auto x_const = x.detach();
  const std::vector<double> y(y_emotion.values().begin(), y_emotion.values().end());

  Perturbation<T> result;
  std::vector<bool> frozen(batch, false);
  auto delta = Tensor<T>::zeros(shape, true);

  auto evaluate = [&](Tensor<T>& d) {
    auto [loss, pred] = objective(add(x_const, d));
    if (pred.numel() != y.size()) {
      throw DimensionError("attack: predictions " + shape_str(pred.shape()) +
                           " do not match targets " + shape_str(y_emotion.shape()));
    }
    const double l = static_cast<double>(loss.item());
    if (!std::isfinite(l)) {
      throw NumericalError("attack: non-finite loss after " +
                           std::to_string(result.iterations_run) + " iterations");
    }
    result.loss_trace.push_back(l);
    return std::pair{std::move(loss), std::move(pred)};
  };

  auto [loss, pred] = evaluate(delta);
  while (result.iterations_run < cfg.max_iterations) {
    loss.backward();
    const auto g = delta.grad();
    std::vector<T> next(delta.values().begin(), delta.values().end());
    for (std::size_t i = 0; i < next.size(); ++i) {
      if (frozen[i / per_sample]) continue;
      const T s = static_cast<T>((g[i] > T(0)) - (g[i] < T(0)));
      next[i] = std::clamp(next[i] + eta * s, -eps, eps);
    }
    if (cfg.check_feasibility) {
      for (T v : next) {
        if (!(std::abs(v) <= eps)) {
          throw NumericalError("attack: perturbation left the epsilon ball");
        }
      }
    }
    ++result.iterations_run;
    delta = Tensor<T>::from(shape, std::move(next), true);
    std::tie(loss, pred) = evaluate(delta);

    const std::vector<double> p(pred.values().begin(), pred.values().end());
    if (cfg.per_sample_stop) {
      bool all = true;
      for (std::size_t b = 0; b < batch; ++b) {
        if (frozen[b]) continue;
        const auto row = evaluate_stop(cfg.stop, std::span(p).subspan(b * cols, cols),
                                       std::span(y).subspan(b * cols, cols), cols);
        result.correlation_flagged = result.correlation_flagged || row.flagged;
        frozen[b] = row.fire;
        all = all && row.fire;
      }
      if (all) {
        result.stop_reason = StopReason::kThreshold;
        break;
      }
    } else {
      const auto ev = evaluate_stop(cfg.stop, p, y, cols);
      result.correlation_flagged = result.correlation_flagged || ev.flagged;
      if (ev.fire) {
        result.stop_reason = StopReason::kThreshold;
        break;
      }
    }
  }
  result.delta = delta.detach();
  return result;
}

template <typename T>
Perturbation<T> bim_attack(const ModelParams<T>& params, const ModelSpec& spec,
                           const Tensor<T>& x, const Tensor<T>& y_emotion, const AttackConfig& cfg,
                           const Tensor<T>* y_midlevel) {
  if (cfg.loss == AttackLoss::kTraining && spec.variant == Variant::kA2M2E &&
      (y_midlevel == nullptr || !y_midlevel->defined())) {
    throw ConfigError("joint-loss attack on A2M2E needs mid-level targets");
  }
  const auto y_e = y_emotion.detach();
  std::optional<Tensor<T>> y_m;
  if (y_midlevel && y_midlevel->defined()) y_m = y_midlevel->detach();
  AttackObjective<T> objective = [&](const Tensor<T>& x_adv) {
    auto out = forward(params, spec, x_adv, /*track_param_grads=*/false);
    Tensor<T> loss = cfg.loss == AttackLoss::kTraining
                         ? training_loss(spec, out, y_e, y_m ? &*y_m : nullptr)
                         : loss_emotion(out, y_e);
    return std::pair{std::move(loss), out.emotions};
  };
  return bim_attack(objective, x, y_emotion, cfg);
}

double snr_db(std::span<const double> x, std::span<const double> delta) {
  if (x.size() != delta.size()) throw DimensionError("snr_db: shape mismatch");
  double sx = 0.0, sd = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i] * x[i];
    sd += delta[i] * delta[i];
  }
  if (sd == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sx / sd);
}

template <typename T>
double snr_db(const Tensor<T>& x, const Tensor<T>& delta) {
  if (x.shape() != delta.shape()) throw DimensionError("snr_db: shape mismatch");
  const std::vector<double> xv(x.values().begin(), x.values().end());
  const std::vector<double> dv(delta.values().begin(), delta.values().end());
  return snr_db(xv, dv);
}

#define MEROB_INSTANTIATE_ATTACK(T)                                                           \
  template Perturbation<T> bim_attack(const AttackObjective<T>&, const Tensor<T>&,            \
                                      const Tensor<T>&, const AttackConfig&);                 \
  template Perturbation<T> bim_attack(const ModelParams<T>&, const ModelSpec&,                \
                                      const Tensor<T>&, const Tensor<T>&, const AttackConfig&, \
                                      const Tensor<T>*);                                      \
  template double snr_db(const Tensor<T>&, const Tensor<T>&);

MEROB_INSTANTIATE_ATTACK(float)
MEROB_INSTANTIATE_ATTACK(double)

#undef MEROB_INSTANTIATE_ATTACK

}  // namespace merob
