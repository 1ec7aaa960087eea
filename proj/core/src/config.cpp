#include "merob/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "merob/errors.hpp"
#include "merob/rng.hpp"

namespace merob {

using json = nlohmann::ordered_json;

namespace {

// Serialization ---------------------------------------------------------------

json spec_json(const ModelSpec& s) {
  json j;
  j["in_channels"] = s.in_channels;
  j["conv_blocks"] = json::array();
  for (const auto& b : s.conv_blocks) {
    j["conv_blocks"].push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"pool", b.pool}});
  }
  j["embedding_dim"] = s.embedding_dim;
  j["n_midlevel"] = s.n_midlevel;
  j["n_emotions"] = s.n_emotions;
  j["activation"] = std::string(to_string(s.activation));
  return j;
}

std::string_view loss_name(AttackLoss l) { return l == AttackLoss::kEmotion ? "emotion" : "training"; }

json attack_json(const AttackConfig& a) {
  json j;
  j["epsilon"] = a.epsilon;
  j["eta"] = a.eta;
  j["max_iterations"] = a.max_iterations;
  j["stop"] = to_string(a.stop);
  j["loss"] = std::string(loss_name(a.loss));
  j["per_sample_stop"] = a.per_sample_stop;
  return j;
}

json semantic_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  json d;
  d["source"] = c.data.kind == DataKind::kSynthetic ? "synthetic" : "audio";
  const auto& sy = c.data.synthetic;
  d["synthetic"] = {{"n", sy.n},
                    {"freq_bins", sy.freq_bins},
                    {"frames", sy.frames},
                    {"seed", sy.seed},
                    {"noise_sigma", sy.noise_sigma}};
  const auto& au = c.data.audio;
  d["audio"] = {{"audio_dir", au.audio_dir},
                {"emotion_csv", au.emotion_csv},
                {"midlevel_csv", au.midlevel_csv},
                {"crop_seed", au.crop_seed}};
  const auto& sp = c.data.spectrogram;
  d["spectrogram"] = {{"sample_rate", sp.sample_rate},
                      {"frame_size", sp.frame_size},
                      {"hop_size", sp.hop_size},
                      {"bands_per_octave", sp.bands_per_octave},
                      {"fmin", sp.fmin},
                      {"log_floor", sp.log_floor}};
  d["split_seed"] = c.data.split_seed;
  j["data"] = d;
  j["model"] = spec_json(c.model);
  j["model_overrides"] = json::object();
  for (const auto& [k, v] : c.model_overrides) j["model_overrides"][k] = spec_json(v);
  json t;
  t["learning_rate"] = c.train.learning_rate;
  t["batch_size"] = c.train.batch_size;
  t["max_epochs"] = c.train.max_epochs;
  t["patience"] = c.train.patience;
  t["n_seeds"] = c.train.n_seeds;
  const auto adv = c.train.adversarial.value_or(AdversarialSchedule{});
  t["adversarial"] = {{"every_n_epochs", adv.every_n_epochs}, {"attack", attack_json(adv.attack)}};
  j["train"] = t;
  j["seed_base"] = c.seed_base;
  j["attack"] = attack_json(c.attack);
  return j;
}

// Strict overlay parsing ------------------------------------------------------

void check_keys(const json& j, std::string_view where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.contains(k)) throw ConfigError("unknown config key " + std::string(where) + "." + k);
  }
}

template <typename V>
void read(const json& j, const char* key, V& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key " + std::string(where) + "." + key + " has the wrong type");
  }
}

void read_u64(const json& j, const char* key, std::uint64_t& out, std::string_view where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) {
    throw ConfigError("config key " + std::string(where) + "." + key + " must be a nonnegative integer");
  }
  out = v.get<std::uint64_t>();
}

void read_size(const json& j, const char* key, std::size_t& out, std::string_view where) {
  std::uint64_t v = out;
  read_u64(j, key, v, where);
  out = static_cast<std::size_t>(v);
}

void overlay_spec(const json& j, ModelSpec& s, const std::string& where) {
  check_keys(j, where,
             {"in_channels", "conv_blocks", "embedding_dim", "n_midlevel", "n_emotions", "activation"});
  read_size(j, "in_channels", s.in_channels, where);
  if (j.contains("conv_blocks")) {
    const auto& arr = j.at("conv_blocks");
    if (!arr.is_array()) throw ConfigError(where + ".conv_blocks must be an array");
    s.conv_blocks.clear();
    for (const auto& b : arr) {
      check_keys(b, where + ".conv_blocks[]", {"out_channels", "kernel", "pool"});
      ConvBlock cb;
      read_size(b, "out_channels", cb.out_channels, where);
      read_size(b, "kernel", cb.kernel, where);
      read_size(b, "pool", cb.pool, where);
      s.conv_blocks.push_back(cb);
    }
  }
  read_size(j, "embedding_dim", s.embedding_dim, where);
  read_size(j, "n_midlevel", s.n_midlevel, where);
  read_size(j, "n_emotions", s.n_emotions, where);
  if (j.contains("activation")) {
    std::string a;
    read(j, "activation", a, where);
    s.activation = parse_activation(a);
  }
}

void overlay_attack(const json& j, AttackConfig& a, const std::string& where) {
  check_keys(j, where, {"epsilon", "eta", "max_iterations", "stop", "loss", "per_sample_stop"});
  read(j, "epsilon", a.epsilon, where);
  read(j, "eta", a.eta, where);
  read_size(j, "max_iterations", a.max_iterations, where);
  if (j.contains("stop")) {
    std::string s;
    read(j, "stop", s, where);
    a.stop = parse_stop_rule(s);
  }
  if (j.contains("loss")) {
    std::string s;
    read(j, "loss", s, where);
    if (s == "emotion") {
      a.loss = AttackLoss::kEmotion;
    } else if (s == "training") {
      a.loss = AttackLoss::kTraining;
    } else {
      throw ConfigError("unknown attack loss '" + s + "'");
    }
  }
  read(j, "per_sample_stop", a.per_sample_stop, where);
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  for (const auto& [k, v] : model_overrides) {
    parse_variant(k);
    v.validate();
  }
  train.validate();
  attack.validate();
  if (workers == 0) throw ConfigError("workers must be >= 1");
  if (data.kind == DataKind::kAudio) {
    if (data.audio.audio_dir.empty() || data.audio.emotion_csv.empty()) {
      throw ConfigError("audio source needs data.audio.audio_dir and data.audio.emotion_csv");
    }
  }
}

ModelSpec ExperimentConfig::spec_for(Variant v) const {
  const auto it = model_overrides.find(std::string(to_string(v)));
  ModelSpec s = it == model_overrides.end() ? model : it->second;
  s.variant = v;
  return s;
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < train.n_seeds; ++i) out.push_back(seed_base + i);
  return out;
}

std::uint64_t ExperimentConfig::data_digest() const {
  return fnv1a64(semantic_json(*this)["data"].dump());
}

std::uint64_t ExperimentConfig::digest() const { return fnv1a64(semantic_json(*this).dump()); }

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.data.kind = DataKind::kAudio;
  c.train.adversarial = AdversarialSchedule{};
  return c;
}

ExperimentConfig toy_preset() {
  ExperimentConfig c;
  c.data.kind = DataKind::kSynthetic;
  c.data.synthetic = SynthConfig{};
  c.model.conv_blocks = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
  c.model.embedding_dim = 32;
  c.train.learning_rate = 0.002;
  c.train.max_epochs = 100;
  c.train.patience = 20;
  c.train.n_seeds = 5;
  AdversarialSchedule adv;
  adv.every_n_epochs = 5;
  adv.attack.epsilon = 0.02;
  adv.attack.eta = 0.005;
  adv.attack.max_iterations = 10;
  c.train.adversarial = adv;
  c.attack.epsilon = 0.02;
  c.attack.eta = 0.005;
  c.attack.max_iterations = 200;
  return c;
}

ExperimentConfig preset(std::string_view name) {
  if (name == "toy") return toy_preset();
  if (name == "default" || name == "full") return default_config();
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

std::string config_to_json(const ExperimentConfig& c) {
  auto j = semantic_json(c);
  j["out_dir"] = c.out_dir;
  j["workers"] = c.workers;
  j["digest"] = hex_digest(c.digest());
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(std::string_view text, const ExperimentConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"schema_version", "data", "model", "model_overrides", "train", "seed_base", "attack",
              "out_dir", "workers", "digest"});
  if (j.contains("schema_version")) {
    int v = 0;
    read(j, "schema_version", v, "config");
    if (v != kConfigSchemaVersion) {
      throw ConfigError("config schema_version " + std::to_string(v) + " is not supported (expected " +
                        std::to_string(kConfigSchemaVersion) + ")");
    }
  }
  ExperimentConfig c = base;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"source", "synthetic", "audio", "spectrogram", "split_seed"});
    if (d.contains("source")) {
      std::string s;
      read(d, "source", s, "data");
      if (s == "synthetic") {
        c.data.kind = DataKind::kSynthetic;
      } else if (s == "audio") {
        c.data.kind = DataKind::kAudio;
      } else {
        throw ConfigError("data.source must be 'synthetic' or 'audio', got '" + s + "'");
      }
    }
    if (d.contains("synthetic")) {
      const auto& sy = d.at("synthetic");
      check_keys(sy, "data.synthetic", {"n", "freq_bins", "frames", "seed", "noise_sigma"});
      read_size(sy, "n", c.data.synthetic.n, "data.synthetic");
      read_size(sy, "freq_bins", c.data.synthetic.freq_bins, "data.synthetic");
      read_size(sy, "frames", c.data.synthetic.frames, "data.synthetic");
      read_u64(sy, "seed", c.data.synthetic.seed, "data.synthetic");
      read(sy, "noise_sigma", c.data.synthetic.noise_sigma, "data.synthetic");
    }
    if (d.contains("audio")) {
      const auto& au = d.at("audio");
      check_keys(au, "data.audio", {"audio_dir", "emotion_csv", "midlevel_csv", "crop_seed"});
      read(au, "audio_dir", c.data.audio.audio_dir, "data.audio");
      read(au, "emotion_csv", c.data.audio.emotion_csv, "data.audio");
      read(au, "midlevel_csv", c.data.audio.midlevel_csv, "data.audio");
      read_u64(au, "crop_seed", c.data.audio.crop_seed, "data.audio");
    }
    if (d.contains("spectrogram")) {
      const auto& sp = d.at("spectrogram");
      check_keys(sp, "data.spectrogram",
                 {"sample_rate", "frame_size", "hop_size", "bands_per_octave", "fmin", "log_floor"});
      read(sp, "sample_rate", c.data.spectrogram.sample_rate, "data.spectrogram");
      read_size(sp, "frame_size", c.data.spectrogram.frame_size, "data.spectrogram");
      read_size(sp, "hop_size", c.data.spectrogram.hop_size, "data.spectrogram");
      read_size(sp, "bands_per_octave", c.data.spectrogram.bands_per_octave, "data.spectrogram");
      read(sp, "fmin", c.data.spectrogram.fmin, "data.spectrogram");
      read(sp, "log_floor", c.data.spectrogram.log_floor, "data.spectrogram");
    }
    read_u64(d, "split_seed", c.data.split_seed, "data");
  }
  if (j.contains("model")) overlay_spec(j.at("model"), c.model, "model");
  if (j.contains("model_overrides")) {
    const auto& mo = j.at("model_overrides");
    if (!mo.is_object()) throw ConfigError("model_overrides must be an object");
    for (const auto& [k, v] : mo.items()) {
      parse_variant(k);
      ModelSpec s = c.model_overrides.contains(k) ? c.model_overrides[k] : c.model;
      overlay_spec(v, s, "model_overrides." + k);
      c.model_overrides[k] = s;
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"learning_rate", "batch_size", "max_epochs", "patience", "n_seeds", "adversarial"});
    read(t, "learning_rate", c.train.learning_rate, "train");
    read_size(t, "batch_size", c.train.batch_size, "train");
    read_size(t, "max_epochs", c.train.max_epochs, "train");
    read_size(t, "patience", c.train.patience, "train");
    read_size(t, "n_seeds", c.train.n_seeds, "train");
    if (t.contains("adversarial")) {
      const auto& a = t.at("adversarial");
      check_keys(a, "train.adversarial", {"every_n_epochs", "attack"});
      auto adv = c.train.adversarial.value_or(AdversarialSchedule{});
      read_size(a, "every_n_epochs", adv.every_n_epochs, "train.adversarial");
      if (a.contains("attack")) overlay_attack(a.at("attack"), adv.attack, "train.adversarial.attack");
      c.train.adversarial = adv;
    }
  }
  read_u64(j, "seed_base", c.seed_base, "config");
  if (j.contains("attack")) overlay_attack(j.at("attack"), c.attack, "attack");
  read(j, "out_dir", c.out_dir, "config");
  read_size(j, "workers", c.workers, "config");
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), base);
}

std::string hex_digest(std::uint64_t d) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

}  // namespace merob
