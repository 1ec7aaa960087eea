#pragma once

// Experiment configuration: a versioned JSON document covering the data
// source, model, training and evaluation attack. The digest covers every
// semantic field; output location and worker count are excluded.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "merob/attack.hpp"
#include "merob/dataset.hpp"
#include "merob/model.hpp"
#include "merob/spectrogram.hpp"
#include "merob/train.hpp"

namespace merob {

inline constexpr int kConfigSchemaVersion = 1;

/// Environment variable that relocates the spectrogram cache.
inline constexpr const char* kCacheRootEnv = "MEROB_CACHE_ROOT";

enum class DataKind { kSynthetic, kAudio };

struct AudioPaths {
  std::string audio_dir;
  std::string emotion_csv;
  std::string midlevel_csv;  // empty: no mid-level targets
  std::uint64_t crop_seed = 0;

  bool operator==(const AudioPaths&) const = default;
};

struct DataConfig {
  DataKind kind = DataKind::kSynthetic;
  SynthConfig synthetic;
  AudioPaths audio;
  SpectrogramConfig spectrogram;
  std::uint64_t split_seed = 0;
};

struct ExperimentConfig {
  DataConfig data;
  ModelSpec model;  // variant field is ignored; set per run
  /// Per-variant replacement specs, keyed by variant name.
  std::map<std::string, ModelSpec> model_overrides;
  /// train.adversarial is the schedule of the adversarially trained runs;
  /// clean runs ignore it.
  TrainConfig train;
  std::uint64_t seed_base = 0;
  AttackConfig attack;

  // Not part of the digest.
  std::string out_dir = "runs";
  std::size_t workers = 1;

  void validate() const;
  /// The spec for one variant (overrides applied, variant field set).
  ModelSpec spec_for(Variant v) const;
  std::vector<std::uint64_t> seeds() const;
  /// Digest of the data section alone; keys the spectrogram cache.
  std::uint64_t data_digest() const;
  std::uint64_t digest() const;
};

/// Defaults: the full-scale settings (audio source, full training schedule).
ExperimentConfig default_config();
/// Desk-scale synthetic preset.
ExperimentConfig toy_preset();
ExperimentConfig preset(std::string_view name);

/// Pretty-printed JSON including the schema version.
std::string config_to_json(const ExperimentConfig& c);
/// Overlays a (possibly partial) JSON document onto `base`. Unknown keys,
/// wrong types and a different schema version throw ConfigError.
ExperimentConfig config_from_json(std::string_view text, const ExperimentConfig& base);
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base);

std::string hex_digest(std::uint64_t d);

}  // namespace merob
