#pragma once

// Reference implementations of the statistics, written independently of the
// library code they check.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

namespace merob::test {

// Two-pass textbook Pearson.
inline double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(da * db);
}

// Two-sided Student-t tail via the finite trigonometric series for integer df.
inline double t_two_sided_p(double t, std::size_t df) {
  const double nu = static_cast<double>(df);
  const double th = std::atan(std::fabs(t) / std::sqrt(nu));
  const double c2 = std::cos(th) * std::cos(th);
  double a = 0;
  if (df % 2 == 1) {
    double series = 0, term = 1;
    for (std::size_t k = 1; 2 * k + 1 <= df; ++k) {
      series += term;
      term *= c2 * static_cast<double>(2 * k) / static_cast<double>(2 * k + 1);
    }
    a = 2.0 / std::numbers::pi * (th + (df > 1 ? std::sin(th) * std::cos(th) * series : 0.0));
  } else {
    double series = 0, term = 1;
    for (std::size_t k = 1; 2 * k <= df; ++k) {
      series += term;
      term *= c2 * static_cast<double>(2 * k - 1) / static_cast<double>(2 * k);
    }
    a = std::sin(th) * series;
  }
  return 1.0 - a;
}

inline double quantile7_oracle(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return v[lo] + (h - std::floor(h)) * (v[hi] - v[lo]);
}

}  // namespace merob::test
