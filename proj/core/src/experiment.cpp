#include "merob/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "merob/container.hpp"
#include "merob/errors.hpp"
#include "merob/ops.hpp"

namespace merob {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string RunId::name() const {
  return (adversarial ? "a" : "") + std::string(to_string(variant));
}

RunId parse_run(std::string_view name) {
  if (name.size() > 3 && name.starts_with("aa")) return {parse_variant(name.substr(1)), true};
  return {parse_variant(name), false};
}

std::vector<RunId> table_runs() {
  return {{Variant::kA2E, false},
          {Variant::kA2B2E, false},
          {Variant::kA2M2E, false},
          {Variant::kA2E, true},
          {Variant::kA2B2E, true}};
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Experiment::Experiment(ExperimentConfig cfg, LogFn log) : cfg_(std::move(cfg)), log_(std::move(log)) {
  cfg_.validate();
}

void Experiment::log(const std::string& msg) const {
  static std::mutex mu;
  if (!log_) return;
  std::lock_guard lock(mu);
  log_(msg);
}

fs::path Experiment::cache_dir() const {
  if (const char* root = std::getenv(kCacheRootEnv); root && *root) {
    return fs::path(root) / hex_digest(cfg_.data_digest());
  }
  return out_dir() / "cache";
}

fs::path Experiment::seed_dir(const RunId& run, std::uint64_t seed) const {
  return out_dir() / run.name() / std::to_string(seed);
}

void Experiment::bind_output() {
  const auto path = out_dir() / "config.json";
  const auto digest = hex_digest(cfg_.digest());
  if (fs::exists(path)) {
    json j;
    try {
      j = json::parse(read_text(path));
    } catch (const json::exception&) {
      throw ConfigError(path.string() + " is not valid JSON");
    }
    const auto prior = j.value("digest", std::string());
    if (prior != digest) {
      throw ConfigError("outputs in " + out_dir().string() + " were produced by config digest " + prior +
                        ", the current config has digest " + digest + "; use a fresh --out directory");
    }
    return;
  }
  fs::create_directories(out_dir());
  write_text(path, config_to_json(cfg_));
}

std::size_t Experiment::prepare(bool force_synthetic) {
  const auto dir = cache_dir();
  const bool synthetic = force_synthetic || cfg_.data.kind == DataKind::kSynthetic;
  if (fs::exists(dir / kManifestName)) {
    const auto m = read_manifest(dir);
    if (m.config_digest == cfg_.data_digest()) {
      log("cache " + dir.string() + " is up to date (" + std::to_string(m.clips.size()) + " clips)");
      return m.clips.size();
    }
    log("cache " + dir.string() + " was built from another data config; rebuilding");
  }
  std::vector<Sample> samples;
  std::vector<bool> padded;
  if (synthetic) {
    samples = synth_dataset(cfg_.data.synthetic);
  } else {
    AudioSource src;
    src.audio_dir = cfg_.data.audio.audio_dir;
    src.emotion_csv = cfg_.data.audio.emotion_csv;
    if (!cfg_.data.audio.midlevel_csv.empty()) src.midlevel_csv = cfg_.data.audio.midlevel_csv;
    src.crop_seed = cfg_.data.audio.crop_seed;
    samples = prepare_audio_corpus(src, cfg_.data.spectrogram, &padded);
  }
  auto flags = std::make_unique<bool[]>(padded.size());
  for (std::size_t i = 0; i < padded.size(); ++i) flags[i] = padded[i];
  write_cache(dir, samples, synthetic ? "synthetic" : "audio", cfg_.data_digest(),
              std::span<const bool>(flags.get(), padded.size()));
  log("wrote " + std::to_string(samples.size()) + " clips to " + dir.string());
  corpus_.reset();
  return samples.size();
}

Corpus Experiment::load_corpus() const {
  if (corpus_) return *corpus_;
  const auto dir = cache_dir();
  if (!fs::exists(dir / kManifestName)) {
    throw IngestionError("no spectrogram cache at " + dir.string() + "; run `merob prepare` first");
  }
  const auto m = read_manifest(dir);
  if (m.config_digest != cfg_.data_digest()) {
    throw ConfigError("cache at " + dir.string() + " was built from a different data config; rerun prepare");
  }
  Corpus c;
  c.samples = read_cache(dir);
  c.split = make_split(c.samples.size(), cfg_.data.split_seed);
  corpus_ = c;
  return c;
}

bool Experiment::seed_trained(const RunId& run, std::uint64_t seed) const {
  return fs::exists(seed_dir(run, seed) / "run.json");
}

bool Experiment::seed_attacked(const RunId& run, std::uint64_t seed) const {
  return fs::exists(seed_dir(run, seed) / "predictions.csv");
}

void Experiment::parallel_for(std::size_t n, const std::function<void(std::size_t)>& task) const {
  const std::size_t workers = std::min(cfg_.workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void Experiment::train_seed(const RunId& run, std::uint64_t seed, const Corpus& corpus) const {
  const auto spec = cfg_.spec_for(run.variant);
  const auto dir = seed_dir(run, seed);
  fs::create_directories(dir);
  const auto result = run.adversarial
                          ? train_adversarial<float>(spec, corpus.samples, corpus.split, cfg_.train, seed)
                          : train_clean<float>(spec, corpus.samples, corpus.split, cfg_.train, seed);
  write_bytes(dir / "checkpoint.bin", save_params(result.params, spec));
  write_text(dir / "trainlog.jsonl", result.log.to_jsonl());
  json j;
  j["config_digest"] = hex_digest(cfg_.digest());
  j["run"] = run.name();
  j["seed"] = seed;
  j["epochs_run"] = result.log.epochs_run();
  j["best_epoch"] = result.log.best_epoch;
  j["best_val_loss"] = result.log.best_val_loss;
  j["early_stopped"] = result.log.early_stopped;
  j["batches_per_epoch"] = result.log.batches_per_epoch;
  j["attack_invocations"] = result.log.attack_invocations;
  write_text(dir / "run.json", j.dump(2) + "\n");
  log(run.name() + " seed " + std::to_string(seed) + ": " + std::to_string(result.log.epochs_run()) +
      " epochs, best val loss " + std::to_string(result.log.best_val_loss) + " at epoch " +
      std::to_string(result.log.best_epoch));
}

void Experiment::train(const RunId& run) {
  if (run.variant == Variant::kA2M2E) {
    const auto corpus = load_corpus();
    for (const auto& s : corpus.samples) {
      if (!s.y_midlevel) {
        throw ConfigError("a2m2e needs mid-level targets but clip " + s.clip_id +
                          " has none; set data.audio.midlevel_csv");
      }
    }
  }
  const auto corpus = load_corpus();
  std::vector<std::uint64_t> todo;
  for (auto seed : cfg_.seeds()) {
    if (seed_trained(run, seed)) {
      log(run.name() + " seed " + std::to_string(seed) + ": already trained, skipping");
    } else {
      todo.push_back(seed);
    }
  }
  parallel_for(todo.size(), [&](std::size_t i) { train_seed(run, todo[i], corpus); });

  json m;
  m["config_digest"] = hex_digest(cfg_.digest());
  m["run"] = run.name();
  m["completed_seeds"] = json::array();
  for (auto seed : cfg_.seeds()) {
    if (seed_trained(run, seed)) m["completed_seeds"].push_back(seed);
  }
  write_text(out_dir() / run.name() / "manifest.json", m.dump(2) + "\n");
}

namespace {

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

json attack_config_json(const AttackConfig& a) {
  return {{"epsilon", a.epsilon},
          {"eta", a.eta},
          {"max_iterations", a.max_iterations},
          {"stop", to_string(a.stop)},
          {"loss", a.loss == AttackLoss::kEmotion ? "emotion" : "training"},
          {"per_sample_stop", a.per_sample_stop}};
}

}  // namespace

void Experiment::attack_seed(const RunId& run, std::uint64_t seed, const Corpus& corpus) const {
  const auto spec = cfg_.spec_for(run.variant);
  const auto dir = seed_dir(run, seed);
  const auto params = load_params<float>(read_bytes(dir / "checkpoint.bin"), spec);
  const auto& test = corpus.split.test;
  const auto batch = make_batch<float>(corpus.samples, test);
  const auto clean = forward(params, spec, batch.x, false);
  const auto pert = bim_attack(params, spec, batch.x, batch.y_emotion, cfg_.attack,
                               batch.y_midlevel ? &*batch.y_midlevel : nullptr);
  const auto x_adv = add(batch.x, pert.delta);
  const auto adv = forward(params, spec, x_adv, false);

  const auto delta_dir = dir / "delta";
  fs::create_directories(delta_dir);
  const std::size_t per = pert.delta.numel() / test.size();
  const Shape clip_shape(batch.x.shape().begin() + 1, batch.x.shape().end());
  SeedPredictions p;
  p.seed = seed;
  json snr = json::array();
  const auto dv = pert.delta.values();
  const auto xv = batch.x.values();
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& id = corpus.samples[test[i]].clip_id;
    p.clip_ids.push_back(id);
    std::vector<float> d(dv.begin() + i * per, dv.begin() + (i + 1) * per);
    const std::vector<double> dd(d.begin(), d.end());
    const std::vector<double> xx(xv.begin() + i * per, xv.begin() + (i + 1) * per);
    const double s = snr_db(xx, dd);
    p.snr_db.push_back(s);
    snr.push_back(std::isfinite(s) ? json(s) : json(nullptr));
    Container c;
    c.digest = spec.digest();
    c.records.push_back(to_record("delta", TensorF::from(clip_shape, std::move(d))));
    write_bytes(delta_dir / (id + ".bin"), encode_container(c));
  }
  json side;
  side["config"] = attack_config_json(cfg_.attack);
  side["iterations_run"] = pert.iterations_run;
  side["stop_reason"] = std::string(to_string(pert.stop_reason));
  side["correlation_flagged"] = pert.correlation_flagged;
  side["loss_trace"] = pert.loss_trace;
  side["clip_ids"] = p.clip_ids;
  side["snr_db"] = snr;
  write_text(delta_dir / "attack.json", side.dump(2) + "\n");

  p.truth = to_double(batch.y_emotion.values());
  p.clean = to_double(clean.emotions.values());
  p.adversarial = to_double(adv.emotions.values());
  write_text(dir / "predictions.csv", predictions_csv(p));
  log(run.name() + " seed " + std::to_string(seed) + ": attacked " + std::to_string(test.size()) +
      " clips, loss " + std::to_string(pert.loss_trace.front()) + " -> " +
      std::to_string(pert.loss_trace.back()));
}

void Experiment::attack(const RunId& run) {
  const auto corpus = load_corpus();
  std::vector<std::uint64_t> todo;
  for (auto seed : cfg_.seeds()) {
    if (!seed_trained(run, seed)) {
      throw IngestionError("missing checkpoint for " + run.name() + " seed " + std::to_string(seed) +
                           " in " + seed_dir(run, seed).string() + "; run `merob train` first");
    }
    if (seed_attacked(run, seed)) {
      log(run.name() + " seed " + std::to_string(seed) + ": already attacked, skipping");
    } else {
      todo.push_back(seed);
    }
  }
  parallel_for(todo.size(), [&](std::size_t i) { attack_seed(run, todo[i], corpus); });
}

RunReport Experiment::report(const std::vector<RunId>& runs) {
  std::vector<RunPredictions> preds;
  std::vector<std::string> gaps;
  std::optional<Corpus> corpus;
  for (const auto& run : runs) {
    RunPredictions rp;
    rp.name = run.name();
    for (auto seed : cfg_.seeds()) {
      const auto dir = seed_dir(run, seed);
      if (seed_attacked(run, seed)) {
        auto p = parse_predictions_csv(read_text(dir / "predictions.csv"));
        p.seed = seed;
        const auto side = json::parse(read_text(dir / "delta" / "attack.json"));
        for (const auto& v : side.at("snr_db")) {
          p.snr_db.push_back(v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>());
        }
        rp.seeds.push_back(std::move(p));
      } else if (seed_trained(run, seed)) {
        if (!corpus) corpus = load_corpus();
        const auto spec = cfg_.spec_for(run.variant);
        const auto params = load_params<float>(read_bytes(dir / "checkpoint.bin"), spec);
        const auto batch = make_batch<float>(corpus->samples, corpus->split.test);
        SeedPredictions p;
        p.seed = seed;
        for (auto i : corpus->split.test) p.clip_ids.push_back(corpus->samples[i].clip_id);
        p.truth = to_double(batch.y_emotion.values());
        p.clean = to_double(forward(params, spec, batch.x, false).emotions.values());
        rp.seeds.push_back(std::move(p));
      } else {
        gaps.push_back(run.name() + " seed " + std::to_string(seed) + ": not trained");
      }
    }
    preds.push_back(std::move(rp));
  }
  auto rep = compute_report(preds, hex_digest(cfg_.digest()));
  rep.gaps.insert(rep.gaps.begin(), gaps.begin(), gaps.end());
  write_report_bundle(rep, preds, out_dir() / "report");
  log("wrote report bundle to " + (out_dir() / "report").string());
  return rep;
}

}  // namespace merob
