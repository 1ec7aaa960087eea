#include "merob/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "merob/audio.hpp"
#include "merob/container.hpp"
#include "merob/errors.hpp"
#include "merob/rng.hpp"

namespace merob {

using json = nlohmann::json;

void validate_sample(const Sample& s) {
  const auto& shape = s.spectrogram.shape();
  if (shape.size() != 3 || shape[0] != 1) {
    throw ValidationError("clip '" + s.clip_id + "': spectrogram must be [1,F,T], got " +
                          shape_str(shape));
  }
  for (float v : s.spectrogram.values()) {
    if (!std::isfinite(v)) throw ValidationError("clip '" + s.clip_id + "': non-finite input");
  }
  auto in_unit = [](float v) { return v >= 0.0f && v <= 1.0f; };
  if (s.y_emotion.size() != kNumEmotions || !std::all_of(s.y_emotion.begin(), s.y_emotion.end(), in_unit)) {
    throw ValidationError("clip '" + s.clip_id + "': emotion targets must be 8 values in [0,1]");
  }
  if (s.y_midlevel && (s.y_midlevel->size() != kNumConcepts ||
                       !std::all_of(s.y_midlevel->begin(), s.y_midlevel->end(), in_unit))) {
    throw ValidationError("clip '" + s.clip_id + "': mid-level targets must be 7 values in [0,1]");
  }
}

DatasetSplit make_split(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ConfigError("make_split needs at least 10 items, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5B117));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  DatasetSplit s;
  s.seed = seed;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

// Columns follow kMidlevelNames: melodiousness, articulation,
// rhythmic_stability, tonal_stability, rhythmic_complexity, dissonance,
// modality. Each row has L1 norm 1 and the offset cancels its negative part,
// so A z + b stays inside [0, 1] for every z in [0, 1]^7.
const std::array<std::array<double, kNumConcepts>, kNumEmotions> kSynthMixing = {{
    {-0.10, 0.30, 0.00, 0.00, 0.00, 0.40, -0.20},   // anger
    {0.00, 0.00, 0.00, -0.35, 0.10, 0.35, -0.20},   // fear
    {0.25, -0.30, 0.00, 0.00, 0.00, 0.00, -0.45},   // sadness
    {0.00, 0.00, 0.30, 0.00, 0.00, -0.20, 0.50},    // happiness
    {0.50, -0.30, 0.00, 0.00, 0.00, -0.20, 0.00},   // tenderness
    {0.30, 0.00, 0.00, 0.00, 0.00, -0.30, 0.40},    // valence
    {0.00, 0.50, 0.20, 0.00, 0.30, 0.00, 0.00},     // energy
    {0.00, 0.00, 0.00, -0.30, 0.30, 0.40, 0.00},    // tension
}};

const std::array<double, kNumEmotions> kSynthOffset = {0.30, 0.55, 0.75, 0.20,
                                                       0.50, 0.30, 0.00, 0.30};

namespace {

struct Grating {
  double cycles_f;  // cycles per frequency bin
  double cycles_t;  // cycles per frame
  double phase;
};

constexpr std::array<Grating, kNumConcepts> kGratings = {{
    {0.250, 0.000, 0.0},
    {0.000, 0.250, 0.7},
    {0.000, 0.125, 1.4},
    {0.125, 0.000, 2.1},
    {0.125, 0.125, 2.8},
    {0.125, -0.125, 3.5},
    {0.250, 0.250, 4.2},
}};

constexpr double kGratingAmplitude = 0.5;

}  // namespace

std::array<double, kNumEmotions> synth_emotions(std::span<const double> z) {
  if (z.size() != kNumConcepts) throw DimensionError("synth_emotions needs 7 concepts");
  std::array<double, kNumEmotions> y{};
  for (std::size_t e = 0; e < kNumEmotions; ++e) {
    double acc = kSynthOffset[e];
    for (std::size_t k = 0; k < kNumConcepts; ++k) acc += kSynthMixing[e][k] * z[k];
    y[e] = std::clamp(acc, 0.0, 1.0);
  }
  return y;
}

std::vector<double> synth_basis(std::size_t k, std::size_t freq_bins, std::size_t frames) {
  const auto& g = kGratings.at(k);
  std::vector<double> img(freq_bins * frames);
  for (std::size_t f = 0; f < freq_bins; ++f) {
    for (std::size_t t = 0; t < frames; ++t) {
      const double arg = 2.0 * std::numbers::pi *
                             (g.cycles_f * static_cast<double>(f) + g.cycles_t * static_cast<double>(t)) +
                         g.phase;
      img[f * frames + t] = kGratingAmplitude * std::cos(arg);
    }
  }
  return img;
}

std::vector<double> synth_render(std::span<const double> z, std::size_t freq_bins,
                                 std::size_t frames) {
  if (z.size() != kNumConcepts) throw DimensionError("synth_render needs 7 concepts");
  std::vector<double> img(freq_bins * frames);
  for (std::size_t f = 0; f < freq_bins; ++f) {
    const double tilt = -0.25 - 0.5 * static_cast<double>(f) / static_cast<double>(freq_bins);
    for (std::size_t t = 0; t < frames; ++t) img[f * frames + t] = tilt;
  }
  for (std::size_t k = 0; k < kNumConcepts; ++k) {
    const auto basis = synth_basis(k, freq_bins, frames);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] += z[k] * basis[i];
  }
  return img;
}

std::vector<Sample> synth_dataset(const SynthConfig& cfg) {
  if (cfg.n < 20) throw ConfigError("synthetic corpus needs n >= 20");
  if (cfg.freq_bins < 4 || cfg.frames < 4) {
    throw ConfigError("synthetic spectrogram shape " + std::to_string(cfg.freq_bins) + "x" +
                      std::to_string(cfg.frames) + " is degenerate");
  }
  if (cfg.noise_sigma < 0) throw ConfigError("noise sigma must be nonnegative");
  std::vector<Sample> out;
  out.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Rng concept_rng(mix_seed(cfg.seed, 2 * i));
    Rng noise_rng(mix_seed(cfg.seed, 2 * i + 1));
    std::array<double, kNumConcepts> z{};
    for (auto& v : z) v = concept_rng.uniform();
    auto img = synth_render(z, cfg.freq_bins, cfg.frames);
    if (cfg.noise_sigma > 0) {
      for (auto& v : img) v += cfg.noise_sigma * noise_rng.normal();
    }
    Sample s;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05zu", i);
    s.clip_id = id;
    s.spectrogram = TensorF::from({1, cfg.freq_bins, cfg.frames},
                                  std::vector<float>(img.begin(), img.end()));
    const auto y = synth_emotions(z);
    s.y_emotion.assign(y.begin(), y.end());
    s.y_midlevel = std::vector<float>(z.begin(), z.end());
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("make_batch with no samples");
  const auto& first = samples[indices[0]].spectrogram.shape();
  const std::size_t F = first[1], Tn = first[2];
  const std::size_t B = indices.size();
  std::vector<T> x;
  x.reserve(B * F * Tn);
  std::vector<T> ye;
  std::vector<T> ym;
  bool all_mid = true;
  for (auto i : indices) {
    const auto& s = samples[i];
    if (s.spectrogram.shape() != first) {
      throw DimensionError("batch mixes spectrogram shapes " + shape_str(first) + " and " +
                           shape_str(s.spectrogram.shape()));
    }
    for (float v : s.spectrogram.values()) x.push_back(static_cast<T>(v));
    for (float v : s.y_emotion) ye.push_back(static_cast<T>(v));
    if (s.y_midlevel) {
      for (float v : *s.y_midlevel) ym.push_back(static_cast<T>(v));
    } else {
      all_mid = false;
    }
  }
  Batch<T> b;
  b.x = Tensor<T>::from({B, 1, F, Tn}, std::move(x));
  const std::size_t n_emo = ye.size() / B, n_mid = ym.size() / B;
  b.y_emotion = Tensor<T>::from({B, n_emo}, std::move(ye));
  if (all_mid) b.y_midlevel = Tensor<T>::from({B, n_mid}, std::move(ym));
  return b;
}

template Batch<float> make_batch<float>(std::span<const Sample>, std::span<const std::size_t>);
template Batch<double> make_batch<double>(std::span<const Sample>, std::span<const std::size_t>);

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
  json j;
  j["version"] = 1;
  j["source"] = m.source;
  j["config_digest"] = hex64(m.config_digest);
  j["clips"] = json::array();
  for (const auto& c : m.clips) {
    json e;
    e["clip_id"] = c.clip_id;
    e["file"] = c.file;
    e["offset_seconds"] = c.offset_seconds;
    e["zero_padded"] = c.zero_padded;
    e["y_emotion"] = c.y_emotion;
    if (c.y_midlevel) e["y_midlevel"] = *c.y_midlevel;
    j["clips"].push_back(std::move(e));
  }
  const auto text = j.dump(1) + "\n";
  write_bytes(dir / kManifestName, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                             text.size()));
}

Manifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw IngestionError("no cache manifest at " + path.string());
  Manifest m;
  try {
    const auto j = json::parse(in);
    if (j.at("version").get<int>() != 1) throw FormatError("unsupported manifest version");
    m.source = j.at("source").get<std::string>();
    m.config_digest = std::stoull(j.at("config_digest").get<std::string>(), nullptr, 16);
    for (const auto& e : j.at("clips")) {
      ManifestEntry c;
      c.clip_id = e.at("clip_id").get<std::string>();
      c.file = e.at("file").get<std::string>();
      c.offset_seconds = e.at("offset_seconds").get<double>();
      c.zero_padded = e.value("zero_padded", false);
      c.y_emotion = e.at("y_emotion").get<std::vector<float>>();
      if (e.contains("y_midlevel")) c.y_midlevel = e.at("y_midlevel").get<std::vector<float>>();
      m.clips.push_back(std::move(c));
    }
  } catch (const json::exception& ex) {
    throw FormatError(path.string() + ": malformed manifest (" + ex.what() + ")");
  }
  return m;
}

void write_cache(const std::filesystem::path& dir, std::span<const Sample> samples,
                 const std::string& source, std::uint64_t config_digest,
                 std::span<const bool> zero_padded) {
  Manifest m;
  m.source = source;
  m.config_digest = config_digest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    ManifestEntry e;
    e.clip_id = s.clip_id;
    e.file = "spec/" + s.clip_id + ".bin";
    e.offset_seconds = s.crop_offset_seconds;
    e.zero_padded = i < zero_padded.size() && zero_padded[i];
    e.y_emotion = s.y_emotion;
    e.y_midlevel = s.y_midlevel;
    Container c;
    c.records.push_back(to_record("spectrogram", s.spectrogram));
    write_bytes(dir / e.file, encode_container(c));
    m.clips.push_back(std::move(e));
  }
  write_manifest(dir, m);
}

std::vector<Sample> read_cache(const std::filesystem::path& dir) {
  const auto m = read_manifest(dir);
  std::vector<Sample> out;
  out.reserve(m.clips.size());
  for (const auto& e : m.clips) {
    const auto c = decode_container(read_bytes(dir / e.file));
    Sample s;
    s.clip_id = e.clip_id;
    s.spectrogram = from_record<float>(c.find("spectrogram"));
    s.y_emotion = e.y_emotion;
    s.y_midlevel = e.y_midlevel;
    s.crop_offset_seconds = e.offset_seconds;
    validate_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> prepare_audio_corpus(const AudioSource& src, const SpectrogramConfig& cfg,
                                         std::vector<bool>* zero_padded) {
  const auto emotions = normalize_targets(
      read_annotation_csv(src.emotion_csv, kEmotionNames, kEmotionRange));
  std::optional<AnnotationTable> mid;
  if (src.midlevel_csv) {
    mid = normalize_targets(read_annotation_csv(*src.midlevel_csv, kMidlevelNames, kMidlevelRange));
  }
  if (emotions.rows.empty()) {
    throw IngestionError(src.emotion_csv.string() + ": no annotated clips");
  }

  std::vector<std::string> missing;
  for (const auto& row : emotions.rows) {
    if (!std::filesystem::exists(src.audio_dir / (row.clip_id + ".wav"))) {
      missing.push_back(row.clip_id + ".wav");
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing audio files in " + src.audio_dir.string() + ":";
    for (const auto& f : missing) msg += " " + f;
    throw IngestionError(msg);
  }

  std::vector<Sample> out;
  for (const auto& row : emotions.rows) {
    const auto wave = load_audio(src.audio_dir / (row.clip_id + ".wav"));
    const auto crop = crop_10s(wave, src.crop_seed, row.clip_id);
    Sample s;
    s.clip_id = row.clip_id;
    s.spectrogram = spectrogram(crop.waveform, cfg);
    s.y_emotion.assign(row.values.begin(), row.values.end());
    s.crop_offset_seconds = crop.offset_seconds();
    if (mid) {
      if (const auto* m = mid->find(row.clip_id)) {
        s.y_midlevel = std::vector<float>(m->values.begin(), m->values.end());
      }
    }
    validate_sample(s);
    if (zero_padded) zero_padded->push_back(crop.zero_padded);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace merob
