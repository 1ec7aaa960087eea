#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include "merob/annotations.hpp"
#include "merob/audio.hpp"
#include "merob/dataset.hpp"
#include "merob/errors.hpp"
#include "merob/spectrogram.hpp"
#include "test_util.hpp"

namespace merob {
namespace {

std::vector<double> sine(double hz, double rate, std::size_t n, double amp = 0.5) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
  return x;
}

// Magnitude of the DFT of x at integer bin k (direct sum).
double dft_mag(const std::vector<double>& x, std::size_t k) {
  double re = 0, im = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = -2.0 * std::numbers::pi * static_cast<double>(k) * static_cast<double>(i) / n;
    re += x[i] * std::cos(a);
    im += x[i] * std::sin(a);
  }
  return std::hypot(re, im);
}

TEST(Audio, WavRoundTripAndIdentityResample) {
  const auto dir = test::scratch_dir("wav");
  WavData w{22050, 1, sine(440, 22050, 2205)};
  write_wav(dir / "a.wav", w, WavEncoding::kFloat32);
  const auto loaded = load_audio(dir / "a.wav");
  ASSERT_EQ(loaded.samples.size(), w.interleaved.size());
  for (std::size_t i = 0; i < w.interleaved.size(); ++i)
    EXPECT_EQ(loaded.samples[i], static_cast<double>(static_cast<float>(w.interleaved[i])));
  EXPECT_EQ(resample_linear(w.interleaved, 22050, 22050), w.interleaved);
}

TEST(Audio, AntiphaseStereoDownmixesToSilence) {
  const auto dir = test::scratch_dir("stereo");
  const auto a = sine(300, 22050, 1000);
  WavData w{22050, 2, {}};
  for (double v : a) {
    w.interleaved.push_back(v);
    w.interleaved.push_back(-v);
  }
  write_wav(dir / "s.wav", w, WavEncoding::kPcm16);
  for (double v : load_audio(dir / "s.wav").samples) EXPECT_EQ(v, 0.0);
}

TEST(Audio, ResampledToneKeepsItsPeak) {
  const auto dir = test::scratch_dir("resample");
  WavData w{44100, 1, sine(440, 44100, 44100)};
  write_wav(dir / "t.wav", w, WavEncoding::kFloat32);
  const auto x = load_audio(dir / "t.wav");
  EXPECT_EQ(x.sample_rate, 22050.0);
  std::vector<double> one_second(x.samples.begin(), x.samples.begin() + 22050);
  std::size_t best = 0;
  double best_mag = -1;
  for (std::size_t k = 400; k <= 480; ++k) {
    const double m = dft_mag(one_second, k);  // 1 Hz per bin
    if (m > best_mag) best_mag = m, best = k;
  }
  EXPECT_NEAR(static_cast<double>(best), 440.0, 1.0);
}

TEST(Audio, UnreadableFileNamesPath) {
  const auto dir = test::scratch_dir("bad");
  std::ofstream(dir / "x.wav") << "ID3 not a wav";
  try {
    load_audio(dir / "x.wav");
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("x.wav"), std::string::npos);
  }
  EXPECT_THROW(load_audio(dir / "missing.wav"), IngestionError);
}

TEST(Crop, ExactLengthIsIdentity) {
  Waveform w;
  w.samples = sine(100, 22050, kCropSamples);
  const auto c = crop_10s(w, 3, "clip");
  EXPECT_EQ(c.offset, 0u);
  EXPECT_FALSE(c.zero_padded);
  EXPECT_EQ(c.waveform.samples, w.samples);
}

TEST(Crop, ShortInputIsPaddedAndFlagged) {
  Waveform w;
  w.samples.assign(1000, 0.25);
  const auto c = crop_10s(w, 3, "clip");
  EXPECT_TRUE(c.zero_padded);
  ASSERT_EQ(c.waveform.samples.size(), kCropSamples);
  EXPECT_EQ(c.waveform.samples[999], 0.25);
  EXPECT_EQ(c.waveform.samples[1000], 0.0);
  EXPECT_THROW(crop_10s(Waveform{}, 0, "empty"), IngestionError);
}

TEST(Crop, DeterministicAndRoughlyUniform) {
  Waveform w;
  w.samples.assign(17 * 22050, 0.0);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = static_cast<double>(i % 1000) / 1000.0;
  EXPECT_EQ(crop_10s(w, 9, "abc").offset, crop_10s(w, 9, "abc").offset);
  // Offsets in [0, 7 s] over 100 seeds, 5 equal bins, chi-square with 4 dof.
  std::array<int, 5> bins{};
  const double span = static_cast<double>(w.samples.size() - kCropSamples + 1);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto c = crop_10s(w, seed, "clip_017");
    ASSERT_LE(c.offset_seconds(), 7.0);
    ASSERT_EQ(c.waveform.samples.front(), w.samples[c.offset]);
    ++bins[std::min<std::size_t>(4, static_cast<std::size_t>(5.0 * static_cast<double>(c.offset) / span))];
  }
  double chi2 = 0;
  for (int b : bins) chi2 += (b - 20.0) * (b - 20.0) / 20.0;
  EXPECT_LT(chi2, 18.47);  // p = 0.001
}

TEST(Spectrogram, FrameCountAndBandCount) {
  Waveform w;
  w.samples = sine(440, 22050, kCropSamples);
  const auto s = spectrogram(w);
  EXPECT_EQ(frame_count(kCropSamples, 705), 313u);
  ASSERT_EQ(s.rank(), 3u);
  EXPECT_EQ(s.dim(2), 313u);
  EXPECT_EQ(s.dim(1), LogFilterbank(SpectrogramConfig{}).num_bands());
  EXPECT_NEAR(static_cast<double>(s.dim(1)), 178.0, 2.0);
}

TEST(Spectrogram, SilenceIsTheLogFloor) {
  Waveform w;
  w.samples.assign(kCropSamples, 0.0);
  for (float v : spectrogram(w).values()) EXPECT_EQ(v, static_cast<float>(std::log10(1e-5)));
}

TEST(Spectrogram, ToneLandsInNearestCentreBand) {
  const SpectrogramConfig cfg;
  const LogFilterbank fb(cfg);
  std::size_t nearest = 0;
  for (std::size_t k = 0; k < fb.num_bands(); ++k)
    if (std::fabs(fb.centers()[k] - 440.0) < std::fabs(fb.centers()[nearest] - 440.0)) nearest = k;
  EXPECT_EQ(nearest, 66u);  // 65.4 * 2^(66/24) = 440.0
  Waveform w;
  w.samples = sine(440, 22050, 22050 * 2);
  const auto m = filterbank_magnitudes(w, cfg);
  const auto F = m.dim(1), T = m.dim(2);
  std::vector<double> energy(F, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) energy[f] += m.values()[f * T + t];
  EXPECT_EQ(static_cast<std::size_t>(std::max_element(energy.begin(), energy.end()) - energy.begin()),
            nearest);
}

TEST(Spectrogram, WrongSampleRate) {
  Waveform w;
  w.samples.assign(1000, 0.0);
  w.sample_rate = 44100;
  EXPECT_THROW(spectrogram(w), ConfigError);
}

TEST(Normalize, PeakFloorAndScaleInvariance) {
  Rng rng(1);
  auto mag = test::random_tensor<float>({1, 10, 12}, rng, false, 0.0, 3.0);
  const auto n = normalize_spectrogram(mag);
  EXPECT_EQ(*std::max_element(n.values().begin(), n.values().end()),
            static_cast<float>(std::log10(1.0 + 1e-5)));
  for (float c : {0.125f, 2.0f, 1024.0f, 0x1p-20f}) {
    auto scaled = mag.clone();
    for (auto& v : scaled.mutable_values()) v *= c;
    const auto ns = normalize_spectrogram(scaled);
    EXPECT_EQ(std::memcmp(ns.values().data(), n.values().data(), n.numel() * sizeof(float)), 0) << c;
  }
  for (float c : {0.3f, 7.0f}) {  // non-dyadic gains round the scaled input once
    auto scaled = mag.clone();
    for (auto& v : scaled.mutable_values()) v *= c;
    const auto ns = normalize_spectrogram(scaled);
    for (std::size_t i = 0; i < n.numel(); ++i) EXPECT_NEAR(ns.values()[i], n.values()[i], 1e-5);
  }
  const auto silent = normalize_spectrogram(TensorF::zeros({1, 3, 3}));
  for (float v : silent.values()) EXPECT_EQ(v, -5.0f);
}

TEST(Normalize, AudioGainLeavesModelInputUnchanged) {
  Waveform w;
  w.samples = sine(523.25, 22050, kCropSamples, 0.1);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] += 0.05 * std::sin(0.001 * static_cast<double>(i * i % 9973));
  auto loud = w;
  for (auto& v : loud.samples) v *= 4.0;
  const auto a = spectrogram(w), b = spectrogram(loud);
  EXPECT_EQ(std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(float)), 0);
}

TEST(Annotations, RangeEndpointsAndRoundTrip) {
  EXPECT_EQ(normalize_rating(1.0, kEmotionRange), 0.0);
  EXPECT_EQ(normalize_rating(7.83, kEmotionRange), 1.0);
  EXPECT_EQ(normalize_rating(5.5, kMidlevelRange), 0.5);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.uniform(1.0, 7.83);
    EXPECT_NEAR(denormalize_rating(normalize_rating(v, kEmotionRange), kEmotionRange), v, 1e-12);
  }
}

TEST(Annotations, CsvParseNormalizeAndRangeErrors) {
  const auto dir = test::scratch_dir("csv");
  std::ofstream(dir / "emo.csv") << "clip_id,anger,fear,sadness,happiness,tenderness,valence,energy,tension\n"
                                    "a,1,7.83,2,3,4,5,6,7\n"
                                    "b,1,1,1,1,1,1,1,1\n";
  auto t = read_annotation_csv(dir / "emo.csv", kEmotionNames, kEmotionRange);
  ASSERT_EQ(t.rows.size(), 2u);
  const auto n = normalize_targets(t);
  EXPECT_EQ(n.find("a")->values[0], 0.0);
  EXPECT_EQ(n.find("a")->values[1], 1.0);
  const auto back = denormalize_targets(n);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(back.rows[0].values[i], t.rows[0].values[i], 1e-12);

  std::ofstream(dir / "bad.csv") << "clip_id,anger,fear,sadness,happiness,tenderness,valence,energy,tension\n"
                                    "x1,0.5,1,1,1,1,1,1,1\n"
                                    "ok,1,1,1,1,1,1,1,1\n"
                                    "x2,1,1,1,1,1,1,1,9\n";
  try {
    normalize_targets(read_annotation_csv(dir / "bad.csv", kEmotionNames, kEmotionRange));
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x1"), std::string::npos);
    EXPECT_NE(msg.find("x2"), std::string::npos);
    EXPECT_EQ(msg.find("ok"), std::string::npos);
  }
  std::ofstream(dir / "hdr.csv") << "clip_id,fear,anger\nq,1,1\n";
  EXPECT_THROW(read_annotation_csv(dir / "hdr.csv", kEmotionNames, kEmotionRange), IngestionError);
}

TEST(Split, SizesDisjointDeterministic) {
  const auto s = make_split(360, 4);
  EXPECT_EQ(s.train.size(), 288u);
  EXPECT_EQ(s.val.size(), 36u);
  EXPECT_EQ(s.test.size(), 36u);
  const auto t = make_split(10, 0);
  EXPECT_EQ(t.train.size(), 8u);
  EXPECT_EQ(t.val.size(), 1u);
  EXPECT_EQ(t.test.size(), 1u);
  EXPECT_THROW(make_split(9, 0), ConfigError);
  const auto again = make_split(360, 4);
  EXPECT_EQ(s.train, again.train);
  EXPECT_EQ(s.test, again.test);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 360u);
  EXPECT_EQ(*all.rbegin(), 359u);
}

TEST(Synth, DeterminismAndAffineEmotions) {
  SynthConfig cfg;
  cfg.n = 30;
  cfg.noise_sigma = 0.0;
  const auto z = std::vector<double>(kNumConcepts, 0.0);
  const auto y0 = synth_emotions(z);
  for (std::size_t e = 0; e < kNumEmotions; ++e) EXPECT_EQ(y0[e], std::clamp(kSynthOffset[e], 0.0, 1.0));
  EXPECT_EQ(synth_render(z, 32, 64), synth_render(z, 32, 64));

  const auto a = synth_dataset(cfg), b = synth_dataset(cfg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].spectrogram.to_vector(), b[i].spectrogram.to_vector());
    validate_sample(a[i]);
    std::vector<double> zi(a[i].y_midlevel->begin(), a[i].y_midlevel->end());
    const auto render = synth_render(zi, 32, 64);
    // Without noise the image is the rendering of the stored concepts.
    for (std::size_t p = 0; p < render.size(); p += 97)
      EXPECT_NEAR(a[i].spectrogram.values()[p], render[p], 1e-6);
  }
  cfg.n = 19;
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
  cfg.n = 20;
  cfg.frames = 1;
  EXPECT_THROW(synth_dataset(cfg), ConfigError);
}

// Solves the normal equations of ordinary least squares by Gauss-Jordan.
std::vector<double> least_squares(const std::vector<std::vector<double>>& X, const std::vector<double>& y) {
  const std::size_t p = X[0].size();
  std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
  for (std::size_t r = 0; r < X.size(); ++r)
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) a[i][j] += X[r][i] * X[r][j];
      a[i][p] += X[r][i] * y[r];
    }
  for (std::size_t c = 0; c < p; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < p; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < p; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k <= p; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::vector<double> beta(p);
  for (std::size_t i = 0; i < p; ++i) beta[i] = a[i][p] / a[i][i];
  return beta;
}

TEST(Synth, ConceptsAreLinearlyRecoverable) {
  SynthConfig cfg;
  cfg.n = 500;
  cfg.seed = 77;
  const auto data = synth_dataset(cfg);
  std::vector<std::vector<double>> basis;
  for (std::size_t k = 0; k < kNumConcepts; ++k) basis.push_back(synth_basis(k, cfg.freq_bins, cfg.frames));
  std::vector<std::vector<double>> X;
  for (const auto& s : data) {
    std::vector<double> row{1.0};
    for (const auto& b : basis) {
      double dot = 0;
      for (std::size_t i = 0; i < b.size(); ++i) dot += b[i] * s.spectrogram.values()[i];
      row.push_back(dot);
    }
    X.push_back(row);
  }
  for (std::size_t k = 0; k < kNumConcepts; ++k) {
    std::vector<double> y;
    for (const auto& s : data) y.push_back((*s.y_midlevel)[k]);
    const auto beta = least_squares(X, y);
    double mean = 0;
    for (double v : y) mean += v / static_cast<double>(y.size());
    double ss_res = 0, ss_tot = 0;
    for (std::size_t r = 0; r < X.size(); ++r) {
      double pred = 0;
      for (std::size_t j = 0; j < beta.size(); ++j) pred += beta[j] * X[r][j];
      ss_res += (y[r] - pred) * (y[r] - pred);
      ss_tot += (y[r] - mean) * (y[r] - mean);
    }
    EXPECT_GE(1.0 - ss_res / ss_tot, 0.9) << "concept " << k;
  }
}

TEST(Cache, RoundTripAndManifestCount) {
  const auto dir = test::scratch_dir("cache");
  SynthConfig cfg;
  cfg.n = 200;
  const auto data = synth_dataset(cfg);
  write_cache(dir, data, "synthetic", 42);
  const auto m = read_manifest(dir);
  EXPECT_EQ(m.clips.size(), 200u);
  EXPECT_EQ(m.config_digest, 42u);
  const auto back = read_cache(dir);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); i += 17) {
    EXPECT_EQ(back[i].clip_id, data[i].clip_id);
    EXPECT_EQ(back[i].spectrogram.to_vector(), data[i].spectrogram.to_vector());
    EXPECT_EQ(back[i].y_emotion, data[i].y_emotion);
    EXPECT_EQ(*back[i].y_midlevel, *data[i].y_midlevel);
  }
}

TEST(Batch, ShapesAndMidlevelPresence) {
  SynthConfig cfg;
  cfg.n = 20;
  auto data = synth_dataset(cfg);
  const std::vector<std::size_t> idx{3, 1, 4};
  const auto b = make_batch<float>(data, idx);
  EXPECT_EQ(b.x.shape(), (Shape{3, 1, 32, 64}));
  EXPECT_EQ(b.y_emotion.shape(), (Shape{3, 8}));
  ASSERT_TRUE(b.y_midlevel.has_value());
  EXPECT_EQ(b.y_emotion.values()[8], data[1].y_emotion[0]);
  data[4].y_midlevel.reset();
  EXPECT_FALSE(make_batch<float>(data, idx).y_midlevel.has_value());
}

TEST(AudioCorpus, MissingFilesListedTogetherThenPrepared) {
  const auto dir = test::scratch_dir("corpus");
  std::ofstream(dir / "emo.csv") << "clip_id,anger,fear,sadness,happiness,tenderness,valence,energy,tension\n"
                                    "c1,1,2,3,4,5,6,7,7.83\n"
                                    "c2,2,2,2,2,2,2,2,2\n"
                                    "c3,3,3,3,3,3,3,3,3\n";
  std::ofstream(dir / "mid.csv") << "clip_id,melodiousness,articulation,rhythmic_stability,tonal_stability,"
                                    "rhythmic_complexity,dissonance,modality\n"
                                    "c1,1,2,3,4,5,6,10\n";
  AudioSource src{dir, dir / "emo.csv", dir / "mid.csv", 5};
  write_wav(dir / "c1.wav", {22050, 1, sine(440, 22050, 12 * 22050)});
  try {
    prepare_audio_corpus(src);
    FAIL();
  } catch (const IngestionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("c2.wav"), std::string::npos);
    EXPECT_NE(msg.find("c3.wav"), std::string::npos);
  }
  write_wav(dir / "c2.wav", {44100, 2, std::vector<double>(2 * 44100 * 3, 0.1)});
  write_wav(dir / "c3.wav", {22050, 1, sine(220, 22050, 10 * 22050)}, WavEncoding::kFloat32);
  std::vector<bool> padded;
  const auto samples = prepare_audio_corpus(src, {}, &padded);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(padded, (std::vector<bool>{false, true, false}));
  for (const auto& s : samples) {
    EXPECT_EQ(s.spectrogram.dim(2), 313u);
    validate_sample(s);
  }
  ASSERT_TRUE(samples[0].y_midlevel.has_value());
  EXPECT_EQ((*samples[0].y_midlevel)[6], 1.0f);
  EXPECT_FALSE(samples[1].y_midlevel.has_value());
  EXPECT_EQ(samples[0].y_emotion[7], 1.0f);
  const auto again = prepare_audio_corpus(src);
  EXPECT_EQ(again[0].spectrogram.to_vector(), samples[0].spectrogram.to_vector());
}

}  // namespace
}  // namespace merob
