#include "merob/spectrogram.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "merob/errors.hpp"

namespace merob {

namespace {

// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

LogFilterbank::LogFilterbank(const SpectrogramConfig& cfg) {
  if (cfg.frame_size < 2 || cfg.bands_per_octave == 0 || cfg.fmin <= 0) {
    throw ConfigError("invalid filterbank configuration");
  }
  num_bins_ = cfg.frame_size / 2 + 1;
  const double nyquist = cfg.sample_rate / 2.0;
  const double bin_hz = cfg.sample_rate / static_cast<double>(cfg.frame_size);
  const double ratio = std::pow(2.0, 1.0 / static_cast<double>(cfg.bands_per_octave));
  for (std::size_t k = 0;; ++k) {
    const double c = cfg.fmin * std::pow(2.0, static_cast<double>(k) /
                                                   static_cast<double>(cfg.bands_per_octave));
    if (c >= nyquist) break;
    centers_.push_back(c);
  }
  for (double c : centers_) {
    const double lo = c / ratio;
    const double hi = c * ratio;
    std::vector<Tap> taps;
    for (std::size_t b = 0; b < num_bins_; ++b) {
      const double f = static_cast<double>(b) * bin_hz;
      double w = 0.0;
      if (f > lo && f <= c) {
        w = (f - lo) / (c - lo);
      } else if (f > c && f < hi) {
        w = (hi - f) / (hi - c);
      }
      if (w > 0.0) taps.push_back({b, w});
    }
    if (taps.empty()) {
      const auto nearest = static_cast<std::size_t>(std::lround(c / bin_hz));
      taps.push_back({std::min(nearest, num_bins_ - 1), 1.0});
    }
    taps_.push_back(std::move(taps));
  }
}

std::vector<double> LogFilterbank::weights(std::size_t band) const {
  std::vector<double> row(num_bins_, 0.0);
  for (const auto& t : taps_.at(band)) row[t.bin] = t.weight;
  return row;
}

void LogFilterbank::apply(const double* magnitudes, double* bands) const {
  for (std::size_t k = 0; k < taps_.size(); ++k) {
    double acc = 0.0;
    for (const auto& t : taps_[k]) acc += t.weight * magnitudes[t.bin];
    bands[k] = acc;
  }
}

std::size_t frame_count(std::size_t n_samples, std::size_t hop) {
  if (hop == 0) throw ConfigError("hop size must be positive");
  return 1 + n_samples / hop;
}

std::vector<double> stft_magnitude(const std::vector<double>& x, const SpectrogramConfig& cfg,
                                   std::size_t* n_frames) {
  const std::size_t n = cfg.frame_size;
  const std::size_t half = n / 2;
  if (x.size() <= half) {
    throw ConfigError("signal of " + std::to_string(x.size()) +
                      " samples is too short for centred framing");
  }
  // Reflection padding: x[-i] = x[i], x[N-1+i] = x[N-1-i].
  std::vector<double> padded(x.size() + 2 * half);
  for (std::size_t i = 0; i < padded.size(); ++i) {
    const auto j = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(half);
    const auto last = static_cast<std::ptrdiff_t>(x.size()) - 1;
    std::ptrdiff_t k = j;
    if (k < 0) k = -k;
    if (k > last) k = 2 * last - k;
    padded[i] = x[static_cast<std::size_t>(k)];
  }

  const std::size_t frames = frame_count(x.size(), cfg.hop_size);
  const std::size_t bins = half + 1;
  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(n));
  }

  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(bins);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  std::vector<double> mag(frames * bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = padded.data() + t * cfg.hop_size;
    for (std::size_t i = 0; i < n; ++i) in[i] = src[i] * window[i];
    fftw_execute(plan);
    for (std::size_t b = 0; b < bins; ++b) mag[t * bins + b] = std::hypot(out[b][0], out[b][1]);
  }
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  *n_frames = frames;
  return mag;
}

TensorF filterbank_magnitudes(const Waveform& w, const SpectrogramConfig& cfg) {
  if (w.sample_rate != cfg.sample_rate) {
    throw ConfigError("spectrogram expects " + std::to_string(cfg.sample_rate) +
                      " Hz input, got " + std::to_string(w.sample_rate));
  }
  std::size_t frames = 0;
  const auto mag = stft_magnitude(w.samples, cfg, &frames);
  const LogFilterbank fb(cfg);
  const std::size_t F = fb.num_bands();
  std::vector<double> bands(F);
  std::vector<float> out(F * frames);
  for (std::size_t t = 0; t < frames; ++t) {
    fb.apply(mag.data() + t * fb.num_bins(), bands.data());
    for (std::size_t f = 0; f < F; ++f) out[f * frames + t] = static_cast<float>(bands[f]);
  }
  return TensorF::from({1, F, frames}, std::move(out));
}

TensorF normalize_spectrogram(const TensorF& magnitudes, double log_floor) {
  auto v = magnitudes.values();
  float peak = 0.0f;
  for (float m : v) {
    if (m < 0.0f || !std::isfinite(m)) {
      throw ValidationError("spectrogram magnitudes must be finite and nonnegative");
    }
    peak = std::max(peak, m);
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = peak > 0.0f ? static_cast<double>(v[i]) / static_cast<double>(peak) : 0.0;
    out[i] = static_cast<float>(std::log10(s + log_floor));
  }
  return TensorF::from(magnitudes.shape(), std::move(out));
}

TensorF spectrogram(const Waveform& w, const SpectrogramConfig& cfg) {
  return normalize_spectrogram(filterbank_magnitudes(w, cfg), cfg.log_floor);
}

}  // namespace merob
