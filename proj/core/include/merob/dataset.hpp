#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "merob/annotations.hpp"
#include "merob/spectrogram.hpp"
#include "merob/tensor.hpp"

namespace merob {

struct Sample {
  std::string clip_id;
  TensorF spectrogram;                           // [1, F, T]
  std::vector<float> y_emotion;                  // 8 values in [0, 1]
  std::optional<std::vector<float>> y_midlevel;  // 7 values in [0, 1]
  double crop_offset_seconds = 0.0;
};

/// Throws ValidationError when the sample breaks a range or finiteness
/// invariant.
void validate_sample(const Sample& s);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

/// Seeded shuffle, then contiguous 80/10/10 partition (sizes rounded to the
/// nearest integer, test takes the remainder). Needs n >= 10.
DatasetSplit make_split(std::size_t n, std::uint64_t seed);

// Synthetic corpus ----------------------------------------------------------

struct SynthConfig {
  std::size_t n = 400;
  std::size_t freq_bins = 32;
  std::size_t frames = 64;
  std::uint64_t seed = 0;
  double noise_sigma = 0.05;
};

/// Fixed full-rank emotion mixing: y_emotion = clip01(A z + b).
inline constexpr std::size_t kNumConcepts = 7;
inline constexpr std::size_t kNumEmotions = 8;
extern const std::array<std::array<double, kNumConcepts>, kNumEmotions> kSynthMixing;
extern const std::array<double, kNumEmotions> kSynthOffset;

/// Emotion targets for a concept vector.
std::array<double, kNumEmotions> synth_emotions(std::span<const double> z);

/// Noise-free rendering of concept vector z on an F x T grid: a fixed tilt
/// plus one oriented grating per concept, scaled by z_k.
std::vector<double> synth_render(std::span<const double> z, std::size_t freq_bins,
                                 std::size_t frames);

/// Basis image of concept k (the grating that z_k scales).
std::vector<double> synth_basis(std::size_t k, std::size_t freq_bins, std::size_t frames);

/// Draws z ~ U[0,1]^7 per sample; spectrogram = render(z) + N(0, sigma^2)
/// noise; y_midlevel = z; y_emotion = clip01(A z + b).
std::vector<Sample> synth_dataset(const SynthConfig& cfg);

// Batching ------------------------------------------------------------------

template <typename T>
struct Batch {
  Tensor<T> x;                           // [B, 1, F, T]
  Tensor<T> y_emotion;                   // [B, 8]
  std::optional<Tensor<T>> y_midlevel;   // [B, 7] when every sample has it
};

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);

// Spectrogram cache -----------------------------------------------------------

struct ManifestEntry {
  std::string clip_id;
  std::string file;  // relative to the cache directory
  double offset_seconds = 0.0;
  bool zero_padded = false;
  std::vector<float> y_emotion;
  std::optional<std::vector<float>> y_midlevel;
};

struct Manifest {
  std::string source;  // "audio" or "synthetic"
  std::uint64_t config_digest = 0;
  std::vector<ManifestEntry> clips;
};

inline constexpr const char* kManifestName = "manifest.json";

void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);

/// Writes one container per sample plus the manifest.
void write_cache(const std::filesystem::path& dir, std::span<const Sample> samples,
                 const std::string& source, std::uint64_t config_digest,
                 std::span<const bool> zero_padded = {});
std::vector<Sample> read_cache(const std::filesystem::path& dir);

struct AudioSource {
  std::filesystem::path audio_dir;
  std::filesystem::path emotion_csv;
  std::optional<std::filesystem::path> midlevel_csv;
  std::uint64_t crop_seed = 0;
};

/// Full preprocessing chain for every annotated clip. Missing audio files
/// are collected and reported together in one IngestionError.
std::vector<Sample> prepare_audio_corpus(const AudioSource& src,
                                         const SpectrogramConfig& cfg = {},
                                         std::vector<bool>* zero_padded = nullptr);

}  // namespace merob
