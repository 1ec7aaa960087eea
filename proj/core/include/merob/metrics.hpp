#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace merob {

/// Mean absolute error over all elements.
double mae(std::span<const double> pred, std::span<const double> target);

/// Mean absolute error per row of a row-major [rows, cols] pair.
std::vector<double> mae_per_row(std::span<const double> pred, std::span<const double> target,
                                std::size_t cols);

double mse(std::span<const double> pred, std::span<const double> target);

enum class CorrStatus { kOk, kConstant };

struct PearsonResult {
  double value = 0.0;  // 0 when status == kConstant
  CorrStatus status = CorrStatus::kOk;

  bool ok() const { return status == CorrStatus::kOk; }
};

/// Sample Pearson correlation. Needs equal lengths >= 2; a constant input
/// yields status kConstant instead of a value.
PearsonResult pearson(std::span<const double> a, std::span<const double> b);

struct AvgCorrelation {
  double value = 0.0;                        // mean over non-constant columns
  std::vector<std::size_t> excluded_columns; // constant columns
};

/// Mean of the per-column correlations of row-major [rows, cols] matrices.
/// Constant columns are excluded (and listed).
AvgCorrelation avg_correlation(std::span<const double> pred, std::span<const double> target,
                               std::size_t cols);

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p = 1.0;
  double mean_diff = 0.0;
  double threshold = 0.0;  // alpha / n_tests
  bool significant = false;
  bool degenerate = false;  // zero variance: t is 0 or +-inf
};

/// One-sample two-sided t-test on paired differences with a Bonferroni
/// corrected threshold alpha / n_tests.
TTestResult paired_ttest(std::span<const double> d, double alpha, std::size_t n_tests);

/// Linear-interpolation quantile (R type 7) of unsorted data.
double quantile(std::span<const double> data, double q);

struct BoxStats {
  std::size_t n = 0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;   // smallest value >= q1 - 1.5 IQR
  double whisker_high = 0.0;  // largest value <= q3 + 1.5 IQR
  std::vector<double> outliers;
};

BoxStats box_stats(std::span<const double> data);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for n == 1
};

MeanStd mean_std(std::span<const double> data);

}  // namespace merob
