#include "merob/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>

#include "merob/errors.hpp"

namespace merob {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": size mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
  }
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> target) {
  require_same_size(pred.size(), target.size(), "mae");
  if (pred.empty()) throw DimensionError("mae of empty arrays");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

std::vector<double> mae_per_row(std::span<const double> pred, std::span<const double> target,
                                std::size_t cols) {
  require_same_size(pred.size(), target.size(), "mae_per_row");
  if (cols == 0 || pred.size() % cols != 0) throw DimensionError("mae_per_row: bad column count");
  std::vector<double> out(pred.size() / cols);
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = mae(pred.subspan(r * cols, cols), target.subspan(r * cols, cols));
  }
  return out;
}

double mse(std::span<const double> pred, std::span<const double> target) {
  require_same_size(pred.size(), target.size(), "mse");
  if (pred.empty()) throw DimensionError("mse of empty arrays");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

PearsonResult pearson(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "pearson");
  if (a.size() < 2) throw DimensionError("pearson needs at least two points");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, CorrStatus::kConstant};
  const double r = sab / std::sqrt(saa * sbb);
  return {std::clamp(r, -1.0, 1.0), CorrStatus::kOk};
}

AvgCorrelation avg_correlation(std::span<const double> pred, std::span<const double> target,
                               std::size_t cols) {
  require_same_size(pred.size(), target.size(), "avg_correlation");
  if (cols == 0 || pred.size() % cols != 0) {
    throw DimensionError("avg_correlation: bad column count");
  }
  const std::size_t rows = pred.size() / cols;
  if (rows < 2) throw DimensionError("avg_correlation needs at least two rows");
  AvgCorrelation out;
  std::vector<double> pc(rows), tc(rows);
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) {
      pc[r] = pred[r * cols + c];
      tc[r] = target[r * cols + c];
    }
    const auto res = pearson(pc, tc);
    if (res.ok()) {
      acc += res.value;
      ++used;
    } else {
      out.excluded_columns.push_back(c);
    }
  }
  out.value = used ? acc / static_cast<double>(used) : 0.0;
  return out;
}

TTestResult paired_ttest(std::span<const double> d, double alpha, std::size_t n_tests) {
  if (d.size() < 2) throw DimensionError("paired_ttest needs at least two differences");
  if (n_tests == 0 || !(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("paired_ttest needs 0 < alpha < 1 and n_tests >= 1");
  }
  const double n = static_cast<double>(d.size());
  double m = 0.0;
  for (double v : d) m += v;
  m /= n;
  double ss = 0.0;
  for (double v : d) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / (n - 1.0));

  TTestResult r;
  r.df = d.size() - 1;
  r.mean_diff = m;
  r.threshold = alpha / static_cast<double>(n_tests);
  if (sd == 0.0) {
    r.degenerate = true;
    if (m == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), m);
      r.p = 0.0;
    }
  } else {
    r.t = m / (sd / std::sqrt(n));
    const boost::math::students_t dist(static_cast<double>(r.df));
    r.p = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))), 0.0, 1.0);
  }
  r.significant = r.p < r.threshold;
  return r;
}

double quantile(std::span<const double> data, double q) {
  if (data.empty()) throw DimensionError("quantile of empty data");
  if (!(q >= 0.0 && q <= 1.0)) throw UsageError("quantile level must be in [0,1]");
  std::vector<double> s(data.begin(), data.end());
  std::sort(s.begin(), s.end());
  const double h = (static_cast<double>(s.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

BoxStats box_stats(std::span<const double> data) {
  if (data.empty()) throw DimensionError("box_stats of empty data");
  BoxStats b;
  b.n = data.size();
  b.median = quantile(data, 0.5);
  b.q1 = quantile(data, 0.25);
  b.q3 = quantile(data, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  std::vector<double> s(data.begin(), data.end());
  std::sort(s.begin(), s.end());
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double v : s) {
    if (v >= lo_fence) {
      b.whisker_low = std::min(v, b.q1);
      break;
    }
  }
  for (auto it = s.rbegin(); it != s.rend(); ++it) {
    if (*it <= hi_fence) {
      b.whisker_high = std::max(*it, b.q3);
      break;
    }
  }
  for (double v : s) {
    if (v < lo_fence || v > hi_fence) b.outliers.push_back(v);
  }
  return b;
}

MeanStd mean_std(std::span<const double> data) {
  if (data.empty()) throw DimensionError("mean_std of empty data");
  const double n = static_cast<double>(data.size());
  double m = 0.0;
  for (double v : data) m += v;
  m /= n;
  if (data.size() == 1) return {m, 0.0};
  double ss = 0.0;
  for (double v : data) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / (n - 1.0))};
}

}  // namespace merob
