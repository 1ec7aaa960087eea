#pragma once

// Experiment pipeline over an output directory:
//
//   <out>/config.json                         effective config
//   <out>/<run>/<seed>/checkpoint.bin         best-validation parameters
//   <out>/<run>/<seed>/trainlog.jsonl
//   <out>/<run>/<seed>/run.json               completion marker
//   <out>/<run>/<seed>/delta/<clip>.bin       attack perturbations
//   <out>/<run>/<seed>/delta/attack.json      attack sidecar
//   <out>/<run>/<seed>/predictions.csv
//   <out>/<run>/manifest.json                 completed seeds
//   <out>/report/                             report bundle
//
// The spectrogram cache lives in <out>/cache unless MEROB_CACHE_ROOT is set.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "merob/config.hpp"
#include "merob/dataset.hpp"
#include "merob/report.hpp"

namespace merob {

/// A trained configuration: a model variant, optionally adversarially trained.
struct RunId {
  Variant variant = Variant::kA2E;
  bool adversarial = false;

  std::string name() const;  // a2e, a2b2e, a2m2e, aa2e, aa2b2e, aa2m2e
  bool operator==(const RunId&) const = default;
};

RunId parse_run(std::string_view name);
/// The five runs of the robustness table: A2E, A2B2E, A2M2E, aA2E, aA2B2E.
std::vector<RunId> table_runs();

using LogFn = std::function<void(const std::string&)>;

struct Corpus {
  std::vector<Sample> samples;
  DatasetSplit split;
};

class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg, LogFn log = {});

  const ExperimentConfig& config() const { return cfg_; }
  std::filesystem::path out_dir() const { return cfg_.out_dir; }
  std::filesystem::path cache_dir() const;
  std::filesystem::path seed_dir(const RunId& run, std::uint64_t seed) const;

  /// Writes <out>/config.json, or checks that an existing one carries the
  /// same digest (ConfigError otherwise).
  void bind_output();

  /// Builds the spectrogram cache; a cache whose manifest already carries
  /// the data digest is left untouched. Returns the number of samples.
  std::size_t prepare(bool force_synthetic = false);
  Corpus load_corpus() const;

  /// Trains every missing seed of `run`; completed seeds are skipped.
  void train(const RunId& run);
  /// Attacks the test split of every trained seed of `run`.
  void attack(const RunId& run);
  /// Collects whatever predictions exist for `runs` and writes the bundle.
  RunReport report(const std::vector<RunId>& runs);

  bool seed_trained(const RunId& run, std::uint64_t seed) const;
  bool seed_attacked(const RunId& run, std::uint64_t seed) const;

 private:
  void train_seed(const RunId& run, std::uint64_t seed, const Corpus& corpus) const;
  void attack_seed(const RunId& run, std::uint64_t seed, const Corpus& corpus) const;
  /// Runs task(i) for i in [0, n) on up to cfg_.workers threads; the first
  /// exception (lowest index) is rethrown after all workers finish.
  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task) const;
  void log(const std::string& msg) const;

  ExperimentConfig cfg_;
  LogFn log_;
  mutable std::optional<Corpus> corpus_;
};

/// Reads a text file; IngestionError when it cannot be opened.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace merob
