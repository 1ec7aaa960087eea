#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace merob {

inline constexpr double kTargetSampleRate = 22050.0;
inline constexpr std::size_t kCropSamples = 220500;  // 10 s at 22.05 kHz

struct Waveform {
  std::vector<double> samples;  // mono, nominally in [-1, 1]
  double sample_rate = kTargetSampleRate;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Interleaved multi-channel PCM as stored in a WAV file.
struct WavData {
  std::uint32_t sample_rate = 0;
  std::uint16_t channels = 0;
  std::vector<double> interleaved;
};

/// Reads PCM WAV (8/16/24/32-bit integer or 32-bit float, incl.
/// WAVE_FORMAT_EXTENSIBLE). Throws IngestionError naming the path otherwise.
WavData read_wav(const std::filesystem::path& path);

enum class WavEncoding { kPcm16, kFloat32 };

void write_wav(const std::filesystem::path& path, const WavData& wav,
               WavEncoding encoding = WavEncoding::kPcm16);

/// Channel mean.
std::vector<double> downmix(const WavData& wav);

/// Linear-interpolation resampling; identity when the rates agree.
std::vector<double> resample_linear(const std::vector<double>& x, double from_rate, double to_rate);

/// read_wav -> downmix -> resample to 22,050 Hz -> clip to [-1, 1].
Waveform load_audio(const std::filesystem::path& path);

struct Crop {
  Waveform waveform;           // exactly kCropSamples long
  std::size_t offset = 0;      // in samples
  bool zero_padded = false;    // input was shorter than 10 s

  double offset_seconds() const { return static_cast<double>(offset) / kTargetSampleRate; }
};

/// Deterministic 10 s crop whose offset is drawn from hash(seed, clip_id).
Crop crop_10s(const Waveform& w, std::uint64_t seed, std::string_view clip_id);

}  // namespace merob
