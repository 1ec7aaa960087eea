#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "merob/attack.hpp"
#include "merob/dataset.hpp"
#include "merob/model.hpp"

namespace merob {

// Adam ----------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamConfig cfg;
  std::size_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a missing gradient counts as zero). Throws NumericalError naming
/// the layer when a gradient is non-finite; parameters are left untouched
/// in that case.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, double lr);

// Training ------------------------------------------------------------------

struct AdversarialSchedule {
  std::size_t every_n_epochs = 5;
  AttackConfig attack = [] {
    AttackConfig a;
    a.max_iterations = 50;
    return a;
  }();

  bool operator==(const AdversarialSchedule&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.0005;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 200;
  std::size_t patience = 50;
  std::size_t n_seeds = 10;
  std::optional<AdversarialSchedule> adversarial;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained model
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool adversarial = false;
  double wall_time = 0.0;  // seconds since training started
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t batches_per_epoch = 0;
  std::size_t attack_invocations = 0;
  bool early_stopped = false;

  std::size_t epochs_run() const { return epochs.empty() ? 0 : epochs.back().epoch; }
  /// One JSON object per epoch.
  std::string to_jsonl() const;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;  // parameters of the best validation epoch
  TrainLog log;
};

/// The variant's own loss averaged over `indices`, evaluated in chunks of
/// `chunk` samples (weighted by chunk size).
template <typename T>
double dataset_loss(const ModelParams<T>& params, const ModelSpec& spec,
                    std::span<const Sample> data, std::span<const std::size_t> indices,
                    std::size_t chunk = 64);

/// Mini-batch Adam with early stopping on the validation loss. Batches are
/// reshuffled each epoch with a stream derived from (seed, epoch). When
/// cfg.adversarial is set, epochs divisible by every_n_epochs take two steps
/// per batch: one clean, one on the batch perturbed by the attack against
/// the current parameters.
template <typename T>
TrainResult<T> train(const ModelSpec& spec, std::span<const Sample> data,
                     const DatasetSplit& split, const TrainConfig& cfg, std::uint64_t seed);

/// train() with the adversarial schedule removed.
template <typename T>
TrainResult<T> train_clean(const ModelSpec& spec, std::span<const Sample> data,
                           const DatasetSplit& split, TrainConfig cfg, std::uint64_t seed);

/// train() with the adversarial schedule required (the default one when the
/// config carries none).
template <typename T>
TrainResult<T> train_adversarial(const ModelSpec& spec, std::span<const Sample> data,
                                 const DatasetSplit& split, TrainConfig cfg, std::uint64_t seed);

}  // namespace merob
