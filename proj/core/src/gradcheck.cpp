#include "merob/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "merob/errors.hpp"
#include "merob/model.hpp"
#include "merob/ops.hpp"
#include "merob/rng.hpp"

namespace merob {

namespace {
constexpr double kSmoothnessTolerance = 1e-6;
constexpr std::size_t kMaxRedraws = 5;
}  // namespace

bool GradCheckReport::pass() const {
  for (const auto& e : entries) {
    if (!e.pass) return false;
  }
  return !entries.empty();
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& e : entries) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-22s max_rel_err=%.3e checks=%zu redraws=%zu %s\n",
                  e.name.c_str(), e.max_rel_error, e.n_checks, e.redraws, e.pass ? "ok" : "FAIL");
    os << buf;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "tolerance %.1e, %.2f s: %s\n", tolerance, seconds,
                pass() ? "PASS" : "FAIL");
  os << buf;
  return os.str();
}

double gradient_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("gradient_rel_error: size mismatch");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

std::vector<double> check_gradients(const ScalarFn& fn, const std::vector<TensorD>& inputs,
                                    double step, bool* smooth) {
  std::vector<TensorD> leaves;
  for (const auto& t : inputs) leaves.push_back(t.clone(true));
  auto out = fn(leaves);
  if (out.numel() != 1) throw DimensionError("check_gradients needs a scalar function");
  out.backward();

  if (smooth) *smooth = true;
  std::vector<double> errors;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    std::vector<double> analytic(leaves[k].numel(), 0.0);
    if (leaves[k].has_grad()) {
      const auto g = leaves[k].grad();
      analytic.assign(g.begin(), g.end());
    }
    std::vector<double> numeric(leaves[k].numel()), half(smooth ? numeric.size() : 0);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      auto probe = [&](double delta) {
        std::vector<TensorD> shifted;
        for (std::size_t j = 0; j < inputs.size(); ++j) shifted.push_back(inputs[j].clone(false));
        shifted[k].mutable_values()[i] += delta;
        return fn(shifted).item();
      };
      numeric[i] = (probe(step) - probe(-step)) / (2.0 * step);
      if (smooth) half[i] = (probe(step / 2) - probe(-step / 2)) / step;
    }
    // Away from kinks the two estimates agree to O(step^2); a ReLU or
    // max-pool switch inside the stencil makes them disagree.
    if (smooth && gradient_rel_error(numeric, half) > kSmoothnessTolerance) *smooth = false;
    errors.push_back(gradient_rel_error(analytic, numeric));
  }
  return errors;
}

namespace {

TensorD random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD::from(std::move(shape), std::move(v));
}

/// Values whose magnitude stays at least `gap` away from zero, so no finite
/// difference straddles a kink at 0.
TensorD away_from_zero(Rng& rng, Shape shape, double gap) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double m = rng.uniform(gap, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return TensorD::from(std::move(shape), std::move(v));
}

/// Distinct values spaced by at least `gap`, in shuffled order, so every
/// pooling window has a unique maximum that survives the step.
TensorD distinct(Rng& rng, Shape shape, double gap) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (static_cast<double>(i) - static_cast<double>(n) / 2) * gap;
  rng.shuffle(std::span(v));
  return TensorD::from(std::move(shape), std::move(v));
}

struct Case {
  std::string name;
  // Builds the inputs and the function for one seed.
  std::function<std::pair<std::vector<TensorD>, ScalarFn>(Rng&)> make;
};

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  cases.push_back({"matmul", [](Rng& rng) {
                     auto target = random_tensor(rng, {3, 5});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(matmul(in[0], in[1]), target);
                     };
                     return std::pair{std::vector{random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5})}, f};
                   }});
  cases.push_back({"conv2d", [](Rng& rng) {
                     auto target = random_tensor(rng, {2, 3, 5, 6});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(conv2d(in[0], in[1], in[2], 1, 1), target);
                     };
                     return std::pair{std::vector{random_tensor(rng, {2, 2, 5, 6}), random_tensor(rng, {3, 2, 3, 3}),
                                                  random_tensor(rng, {3})},
                                      f};
                   }});
  cases.push_back({"conv2d_stride2", [](Rng& rng) {
                     auto target = random_tensor(rng, {1, 2, 3, 3});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(conv2d(in[0], in[1], in[2], 0, 2), target);
                     };
                     return std::pair{std::vector{random_tensor(rng, {1, 2, 7, 7}), random_tensor(rng, {2, 2, 3, 3}),
                                                  random_tensor(rng, {2})},
                                      f};
                   }});
  cases.push_back({"maxpool2d", [](Rng& rng) {
                     auto target = random_tensor(rng, {2, 2, 3, 3});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(maxpool2d(in[0], 2, 2), target);
                     };
                     return std::pair{std::vector{distinct(rng, {2, 2, 6, 7}, 0.01)}, f};
                   }});
  cases.push_back({"global_avg_pool", [](Rng& rng) {
                     auto target = random_tensor(rng, {2, 3});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(global_avg_pool(in[0]), target);
                     };
                     return std::pair{std::vector{random_tensor(rng, {2, 3, 4, 5})}, f};
                   }});
  cases.push_back({"relu", [](Rng& rng) {
                     auto target = random_tensor(rng, {4, 6});
                     ScalarFn f = [target](const std::vector<TensorD>& in) { return mse_loss(relu(in[0]), target); };
                     return std::pair{std::vector{away_from_zero(rng, {4, 6}, 0.01)}, f};
                   }});
  cases.push_back({"leaky_relu", [](Rng& rng) {
                     auto target = random_tensor(rng, {4, 6});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(leaky_relu(in[0], 0.01), target);
                     };
                     return std::pair{std::vector{away_from_zero(rng, {4, 6}, 0.01)}, f};
                   }});
  cases.push_back({"add", [](Rng& rng) {
                     auto target = random_tensor(rng, {3, 4});
                     ScalarFn f = [target](const std::vector<TensorD>& in) { return mse_loss(add(in[0], in[1]), target); };
                     return std::pair{std::vector{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})}, f};
                   }});
  cases.push_back({"sub", [](Rng& rng) {
                     auto target = random_tensor(rng, {3, 4});
                     ScalarFn f = [target](const std::vector<TensorD>& in) { return mse_loss(sub(in[0], in[1]), target); };
                     return std::pair{std::vector{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})}, f};
                   }});
  cases.push_back({"add_bias", [](Rng& rng) {
                     auto target = random_tensor(rng, {3, 4});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(add_bias(in[0], in[1]), target);
                     };
                     return std::pair{std::vector{random_tensor(rng, {3, 4}), random_tensor(rng, {4})}, f};
                   }});
  cases.push_back({"mul_scalar", [](Rng& rng) {
                     auto target = random_tensor(rng, {3, 4});
                     const double s = rng.uniform(-2.0, 2.0);
                     ScalarFn f = [target, s](const std::vector<TensorD>& in) {
                       return mse_loss(mul_scalar(in[0], s), target);
                     };
                     return std::pair{std::vector{random_tensor(rng, {3, 4})}, f};
                   }});
  cases.push_back({"sum", [](Rng& rng) {
                     ScalarFn f = [](const std::vector<TensorD>& in) {
                       auto s = sum(in[0]);
                       return mse_loss(s, TensorD::scalar(0.5));
                     };
                     return std::pair{std::vector{random_tensor(rng, {3, 4})}, f};
                   }});
  cases.push_back({"mean", [](Rng& rng) {
                     ScalarFn f = [](const std::vector<TensorD>& in) {
                       return mse_loss(mean(in[0]), TensorD::scalar(0.25));
                     };
                     return std::pair{std::vector{random_tensor(rng, {3, 4})}, f};
                   }});
  cases.push_back({"clamp", [](Rng& rng) {
                     auto target = random_tensor(rng, {4, 6});
                     ScalarFn f = [target](const std::vector<TensorD>& in) {
                       return mse_loss(clamp(in[0], -0.5, 0.5), target);
                     };
                     // Keep every element clear of both clamp boundaries.
                     auto x = away_from_zero(rng, {4, 6}, 0.01);
                     for (auto& v : x.mutable_values()) {
                       if (std::abs(std::abs(v) - 0.5) < 0.01) v *= 0.9;
                     }
                     return std::pair{std::vector{x}, f};
                   }});
  cases.push_back({"mse_loss", [](Rng& rng) {
                     ScalarFn f = [](const std::vector<TensorD>& in) { return mse_loss(in[0], in[1]); };
                     return std::pair{std::vector{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})}, f};
                   }});
  return cases;
}

ModelSpec small_spec(Variant v) {
  ModelSpec s;
  s.variant = v;
  s.conv_blocks = {{3, 3, 2}, {4, 3, 2}};
  s.embedding_dim = 5;
  return s;
}

/// Model case: inputs are the input batch followed by every parameter.
Case model_case(Variant v) {
  return {"model_" + std::string(to_string(v)), [v](Rng& rng) {
            const auto spec = small_spec(v);
            const auto params = build_model<double>(spec, rng.next_u64());
            std::vector<TensorD> inputs{random_tensor(rng, {2, 1, 8, 8})};
            for (const auto& e : params.layers) {
              // Nonzero biases so the check exercises them.
              inputs.push_back(e.name.ends_with(".bias") ? random_tensor(rng, e.tensor.shape(), -0.1, 0.1)
                                                         : e.tensor.clone());
            }
            auto ye = random_tensor(rng, {2, spec.n_emotions}, 0.0, 1.0);
            auto ym = random_tensor(rng, {2, spec.n_midlevel}, 0.0, 1.0);
            std::vector<std::string> names;
            for (const auto& e : params.layers) names.push_back(e.name);
            ScalarFn f = [spec, names, ye, ym](const std::vector<TensorD>& in) {
              ModelParams<double> p;
              for (std::size_t i = 0; i < names.size(); ++i) p.layers.push_back({names[i], in[i + 1]});
              const auto out = forward(p, spec, in[0]);
              return training_loss(spec, out, ye, &ym);
            };
            return std::pair{inputs, f};
          }};
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;
  report.tolerance = opts.tolerance;
  auto cases = op_cases();
  for (auto v : {Variant::kA2E, Variant::kA2B2E, Variant::kA2M2E}) cases.push_back(model_case(v));
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradCheckEntry e;
    e.name = cases[c].name;
    for (std::size_t s = 0; s < opts.n_seeds; ++s) {
      Rng rng(mix_seed(opts.seed_base + s, fnv1a64(e.name)));
      std::vector<double> errs;
      bool smooth = false;
      for (std::size_t attempt = 0; attempt < kMaxRedraws && !smooth; ++attempt) {
        if (attempt) ++e.redraws;
        auto [inputs, fn] = cases[c].make(rng);
        errs = check_gradients(fn, inputs, opts.step, &smooth);
      }
      if (!smooth) e.non_smooth = true;
      for (double err : errs) {
        e.max_rel_error = std::max(e.max_rel_error, std::isnan(err) ? INFINITY : err);
        ++e.n_checks;
      }
    }
    e.pass = e.max_rel_error <= opts.tolerance && !e.non_smooth;
    report.entries.push_back(std::move(e));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace merob
