#pragma once

// Robustness report: per-run, per-seed clean/attacked metrics, aggregates,
// delta-MAE box statistics, paired t-tests and the emitted file bundle.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "merob/metrics.hpp"

namespace merob {

/// Test-split predictions of one trained seed. Matrices are row-major
/// [clip_ids.size(), n_emotions].
struct SeedPredictions {
  std::uint64_t seed = 0;
  std::vector<std::string> clip_ids;
  std::vector<double> truth;
  std::vector<double> clean;
  std::vector<double> adversarial;  // empty when the seed was not attacked
  std::vector<double> snr_db;       // per clip; +inf for an all-zero delta
};

struct RunPredictions {
  std::string name;  // a2e, a2b2e, a2m2e, aa2e, aa2b2e
  std::vector<SeedPredictions> seeds;
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  double clean_mae = 0.0;
  double clean_corr = 0.0;
  bool attacked = false;
  double adv_mae = 0.0;
  double adv_corr = 0.0;
  double delta_mae = 0.0;  // adv_mae - clean_mae
  std::optional<double> snr_db;  // mean over perturbed clips
  std::vector<std::size_t> constant_columns;  // excluded from clean_corr
};

struct RunSummary {
  std::string name;
  std::vector<SeedMetrics> seeds;
  MeanStd clean_corr;
  MeanStd clean_mae;
  std::optional<MeanStd> adv_mae;
  std::optional<MeanStd> delta_mae;
  std::optional<MeanStd> snr_db;
  std::optional<BoxStats> delta_mae_box;
};

struct TTestEntry {
  std::string a;
  std::string b;
  std::size_t n_pairs = 0;
  TTestResult result;
};

struct RunReport {
  std::vector<RunSummary> runs;
  std::vector<TTestEntry> ttests;
  std::vector<std::string> gaps;
  std::string config_digest;
};

inline constexpr double kReportAlpha = 0.05;

/// Planned comparisons (each tested only when both runs are present):
/// A2E vs A2M2E and A2B2E vs A2M2E, Bonferroni-corrected for the pair.
/// Differences are per-clip attacked |error| (mean over emotions) of the
/// first minus the second, paired by (seed, clip).
RunReport compute_report(std::span<const RunPredictions> runs, const std::string& config_digest);

std::string report_json(const RunReport& r);
std::string table1_markdown(const RunReport& r);
std::string delta_mae_box_svg(const RunReport& r);
/// Truth vs prediction for one emotion; one panel per run using its first
/// seed; clean predictions drawn as crosses, attacked ones as circles.
std::string scatter_svg(std::span<const RunPredictions> runs, std::size_t emotion);

/// CSV with clip_id, truth_<e>, clean_<e>, adv_<e> columns. Values are
/// printed with enough digits to round-trip.
std::string predictions_csv(const SeedPredictions& p);
/// Inverse of predictions_csv (snr_db and seed are not part of the file).
SeedPredictions parse_predictions_csv(const std::string& text);

/// Writes report.json, table1.md, delta_mae_box.svg, scatter_<emotion>.svg
/// and predictions_<run>_<seed>.csv into dir.
void write_report_bundle(const RunReport& r, std::span<const RunPredictions> runs,
                         const std::filesystem::path& dir);

}  // namespace merob
