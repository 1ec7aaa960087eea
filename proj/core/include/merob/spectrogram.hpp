#pragma once

#include <cstddef>
#include <vector>

#include "merob/audio.hpp"
#include "merob/tensor.hpp"

namespace merob {

struct SpectrogramConfig {
  double sample_rate = kTargetSampleRate;
  std::size_t frame_size = 2048;
  std::size_t hop_size = 705;
  std::size_t bands_per_octave = 24;
  double fmin = 65.4;  // C2
  double log_floor = 1e-5;
};

/// Triangular filters on a logarithmic frequency axis. Filter k is centred at
/// fmin * 2^(k / bands_per_octave) and reaches zero at its neighbours'
/// centres; centres run up to (excluding) Nyquist. A filter too narrow to
/// cover any DFT bin falls back to the single bin nearest its centre.
class LogFilterbank {
 public:
  explicit LogFilterbank(const SpectrogramConfig& cfg);

  std::size_t num_bands() const { return centers_.size(); }
  std::size_t num_bins() const { return num_bins_; }
  const std::vector<double>& centers() const { return centers_; }
  /// Dense weight row for band k (length num_bins()).
  std::vector<double> weights(std::size_t band) const;

  /// magnitudes is [num_bins] for one frame; returns [num_bands].
  void apply(const double* magnitudes, double* bands) const;

 private:
  struct Tap {
    std::size_t bin;
    double weight;
  };
  std::size_t num_bins_ = 0;
  std::vector<double> centers_;
  std::vector<std::vector<Tap>> taps_;
};

/// Number of centred frames: 1 + floor(n_samples / hop).
std::size_t frame_count(std::size_t n_samples, std::size_t hop);

/// Magnitude STFT with a periodic Hann window and half-frame reflection
/// padding on both ends. Returns frames x (frame_size/2 + 1), row-major.
std::vector<double> stft_magnitude(const std::vector<double>& x, const SpectrogramConfig& cfg,
                                   std::size_t* n_frames);

/// Filterbank magnitudes [1, F, T] before normalisation.
TensorF filterbank_magnitudes(const Waveform& w, const SpectrogramConfig& cfg = {});

/// S / max(S) (when max > 0), then log10(S + floor).
TensorF normalize_spectrogram(const TensorF& magnitudes, double log_floor = 1e-5);

/// Full front-end: [1, F, T] log-magnitude input for the models.
TensorF spectrogram(const Waveform& w, const SpectrogramConfig& cfg = {});

}  // namespace merob
