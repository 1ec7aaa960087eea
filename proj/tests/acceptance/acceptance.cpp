// End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per criterion
// and exits nonzero when any checked criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "merob/annotations.hpp"
#include "merob/attack.hpp"
#include "merob/config.hpp"
#include "merob/dataset.hpp"
#include "merob/experiment.hpp"
#include "merob/gradcheck.hpp"
#include "merob/metrics.hpp"
#include "merob/ops.hpp"
#include "merob/rng.hpp"
#include "merob/spectrogram.hpp"
#include "merob/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace merob;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-3;
constexpr std::size_t kGradSeeds = 10;
constexpr double kGradSeconds = 60;
constexpr std::size_t kLinfConfigs = 100;
constexpr double kToyAttackSeconds = 5 * 60;
constexpr double kToyAttackGain = 2.0;
constexpr std::size_t kMinSeeds = 5;
constexpr double kExperimentSeconds = 45 * 60;
constexpr double kMinCorr = 0.9;
constexpr double kMaxMae = 0.05;
constexpr std::size_t kExpectedFrames = 313;
constexpr std::size_t kMetricInstances = 100;
constexpr double kMetricTol = 1e-12;

enum class Verdict { kPass, kFail, kSkip };

struct Outcome {
  Verdict verdict = Verdict::kPass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::kPass : Verdict::kFail, std::move(detail)}; }

Outcome gradients() {
  GradCheckOptions o;
  o.n_seeds = kGradSeeds;
  o.step = kGradStep;
  o.tolerance = kGradTol;
  const auto r = run_gradcheck(o);
  double worst = 0;
  std::string worst_name;
  for (const auto& e : r.entries)
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  return verdict(r.pass() && r.seconds <= kGradSeconds,
                 std::to_string(r.entries.size()) + " checks x " + std::to_string(kGradSeeds) +
                     " seeds, worst " + fmt(worst) + " (" + worst_name + "), " + fmt(r.seconds, 3) + " s");
}

AttackConfig budget_attack(double eps, double eta, std::size_t iters) {
  AttackConfig c;
  c.epsilon = eps;
  c.eta = eta;
  c.max_iterations = iters;
  c.stop = StopRule::none();
  c.check_feasibility = true;
  return c;
}

TensorD uniform_tensor(Shape s, Rng& rng) {
  auto t = TensorD::zeros(std::move(s));
  for (auto& v : t.mutable_values()) v = rng.uniform(-1, 1);
  return t;
}

Outcome attack_oracles() {
  std::vector<std::string> problems;

  // One step on f(x) = w x with squared error: delta = eta * sign(2 (w x - y) w).
  Rng rng(11);
  std::size_t scalar_cases = 0;
  for (int i = 0; i < 200; ++i) {
    const double w = rng.uniform(-2, 2), x = rng.uniform(-2, 2), y = rng.uniform(-2, 2);
    const double eta = rng.uniform(1e-4, 1e-2);
    AttackObjective<double> obj = [&](const TensorD& xa) {
      auto pred = matmul(xa, TensorD::from({1, 1}, {w}));
      return std::pair{mse_loss(pred, TensorD::from({1, 1}, {y})), pred};
    };
    const double g = 2.0 * (w * x - y) * w;
    const double expected = eta * static_cast<double>((g > 0) - (g < 0));
    const auto r = bim_attack(obj, TensorD::from({1, 1}, {x}), TensorD::from({1, 1}, {y}), budget_attack(1.0, eta, 1));
    if (r.delta.item() != expected) problems.push_back("scalar case " + std::to_string(i));
    ++scalar_cases;
  }

  // l-inf feasibility after every iteration: each prefix of the iterate
  // sequence is reproduced by a run with that iteration budget.
  std::size_t audited = 0;
  for (std::size_t c = 0; c < kLinfConfigs; ++c) {
    const auto rows = 1 + rng.below(4), cols = 2 + rng.below(6);
    auto x = uniform_tensor({rows, cols}, rng);
    auto y = uniform_tensor({rows, cols}, rng);
    auto w = uniform_tensor({cols, cols}, rng);
    AttackObjective<double> obj = [&](const TensorD& xa) {
      auto pred = leaky_relu(matmul(xa, w), 0.1);
      return std::pair{mse_loss(pred, y), pred};
    };
    const double eps = rng.uniform(1e-4, 0.1);
    const double eta = eps * rng.uniform(0.05, 1.5);
    const auto iters = 1 + rng.below(25);
    for (std::size_t k = 0; k <= iters; ++k) {
      const auto r = bim_attack(obj, x, y, budget_attack(eps, eta, k));
      for (double d : r.delta.values())
        if (!(std::fabs(d) <= eps)) problems.push_back("config " + std::to_string(c) + " iteration " + std::to_string(k));
      ++audited;
    }
  }

  // Bitwise reruns through a small model.
  ModelSpec spec;
  spec.variant = Variant::kA2B2E;
  spec.conv_blocks = {{4, 3, 2}, {8, 3, 2}};
  spec.embedding_dim = 8;
  const auto params = build_model<float>(spec, 3);
  auto xf = TensorF::zeros({4, 1, 16, 24});
  for (auto& v : xf.mutable_values()) v = static_cast<float>(rng.uniform(-5, 0));
  auto yf = TensorF::zeros({4, kNumEmotions});
  for (auto& v : yf.mutable_values()) v = static_cast<float>(rng.uniform());
  const auto cfg = budget_attack(0.02, 0.005, 50);
  const auto a = bim_attack(params, spec, xf, yf, cfg);
  const auto b = bim_attack(params, spec, xf, yf, cfg);
  const bool same = std::memcmp(a.delta.values().data(), b.delta.values().data(), a.delta.numel() * sizeof(float)) == 0 &&
                    a.loss_trace == b.loss_trace;
  if (!same) problems.push_back("rerun differs");

  return verdict(problems.empty(), std::to_string(scalar_cases) + " scalar one-step cases exact, " +
                                       std::to_string(kLinfConfigs) + " configs / " + std::to_string(audited) +
                                       " iterates within budget, rerun " + (same ? "bitwise identical" : "differs") +
                                       (problems.empty() ? "" : "; first problem: " + problems.front()));
}

Outcome toy_attack_strength() {
  const auto t0 = Clock::now();
  const auto toy = toy_preset();
  const auto data = synth_dataset(toy.data.synthetic);
  const auto split = make_split(data.size(), toy.data.split_seed);
  const auto spec = toy.spec_for(Variant::kA2B2E);
  const auto trained = train_clean<float>(spec, data, split, toy.train, toy.seeds().front());
  const auto batch = make_batch<float>(data, split.test);

  auto cfg = toy.attack;
  cfg.epsilon = 0.02;
  cfg.eta = 0.005;
  cfg.max_iterations = 200;
  const auto r = bim_attack(trained.params, spec, batch.x, batch.y_emotion, cfg);

  const double clean = loss_emotion(forward(trained.params, spec, batch.x, false), batch.y_emotion).item();
  const double adv = loss_emotion(forward(trained.params, spec, add(batch.x, r.delta), false), batch.y_emotion).item();
  const double secs = seconds_since(t0);
  const bool ok = adv >= kToyAttackGain * clean && r.loss_trace.back() >= r.loss_trace.front() && secs <= kToyAttackSeconds;
  return verdict(ok, "clean MSE " + fmt(clean) + ", attacked MSE " + fmt(adv) + " (x" + fmt(adv / clean, 3) +
                         "), trace " + fmt(r.loss_trace.front()) + " -> " + fmt(r.loss_trace.back()) + " over " +
                         std::to_string(r.iterations_run) + " iterations, " + fmt(secs, 3) + " s");
}

struct ExperimentRun {
  RunReport report;
  double seconds = 0;
  std::string report_json_bytes;
};

ExperimentRun run_toy_experiment(const fs::path& out) {
  fs::remove_all(out);
  auto cfg = toy_preset();
  cfg.out_dir = out.string();
  cfg.workers = 1;
  const auto t0 = Clock::now();
  Experiment ex(cfg, [](const std::string& m) { std::cerr << "  " << m << "\n"; });
  ex.bind_output();
  ex.prepare();
  for (const auto& run : table_runs()) ex.train(run);
  for (const auto& run : table_runs()) ex.attack(run);
  ExperimentRun r;
  r.report = ex.report(table_runs());
  r.seconds = seconds_since(t0);
  r.report_json_bytes = read_text(out / "report" / "report.json");
  return r;
}

const RunSummary* find_run(const RunReport& r, const std::string& name) {
  for (const auto& s : r.runs)
    if (s.name == name) return &s;
  return nullptr;
}

Outcome robustness_ordering(const ExperimentRun& e) {
  const auto* b = find_run(e.report, "a2b2e");
  const auto* m = find_run(e.report, "a2m2e");
  const auto* ab = find_run(e.report, "aa2b2e");
  if (!b || !m || !ab || !b->delta_mae_box || !m->delta_mae_box || !ab->delta_mae_box)
    return {Verdict::kFail, "missing runs in report"};
  const std::size_t seeds = std::min({b->seeds.size(), m->seeds.size(), ab->seeds.size()});
  const double mb = b->delta_mae_box->median, mm = m->delta_mae_box->median, mab = ab->delta_mae_box->median;
  const bool ok = seeds >= kMinSeeds && mm < mb && mab < mb && e.seconds <= kExperimentSeconds;
  return verdict(ok, "median dMAE A2B2E " + fmt(mb) + ", A2M2E " + fmt(mm) + (mm < mb ? " (lower)" : " (NOT lower)") +
                         ", aA2B2E " + fmt(mab) + (mab < mb ? " (lower)" : " (NOT lower)") + "; " +
                         std::to_string(seeds) + " seeds, " + fmt(e.seconds / 60, 3) + " min");
}

Outcome clean_accuracy(const ExperimentRun& e) {
  bool ok = true;
  std::string detail;
  for (const char* name : {"a2e", "a2b2e", "a2m2e"}) {
    const auto* r = find_run(e.report, name);
    if (!r) return {Verdict::kFail, std::string("missing run ") + name};
    ok = ok && r->clean_corr.mean >= kMinCorr && r->clean_mae.mean <= kMaxMae;
    detail += std::string(detail.empty() ? "" : ", ") + name + " r=" + fmt(r->clean_corr.mean, 4) +
              " MAE=" + fmt(r->clean_mae.mean, 4);
  }
  return verdict(ok, detail);
}

Outcome preprocessing() {
  Waveform w;
  w.samples.resize(kCropSamples);
  Rng rng(5);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.3 * std::sin(2 * 3.141592653589793 * 440.0 * static_cast<double>(i) / kTargetSampleRate) +
                   0.05 * rng.uniform(-1, 1);
  const auto s = spectrogram(w);
  const std::size_t frames = s.shape().back();
  bool invariant = true;
  for (double g : {4.0, 0.5, 0.125}) {
    auto scaled = w;
    for (auto& v : scaled.samples) v *= g;
    const auto t = spectrogram(scaled);
    invariant = invariant && std::memcmp(t.values().data(), s.values().data(), s.numel() * sizeof(float)) == 0;
  }
  const double lo = normalize_rating(1.0, kEmotionRange), hi = normalize_rating(7.83, kEmotionRange);
  const bool ok = frames == kExpectedFrames && invariant && lo == 0.0 && hi == 1.0;
  return verdict(ok, std::to_string(frames) + " frames, gain invariance " + (invariant ? "bitwise" : "BROKEN") +
                         ", ratings 1 -> " + fmt(lo) + ", 7.83 -> " + fmt(hi));
}

Outcome metric_oracles() {
  Rng rng(2024);
  double worst = 0;
  bool df_ok = true;
  auto note = [&](double a, double b) { worst = std::max(worst, std::fabs(a - b)); };
  for (std::size_t inst = 0; inst < kMetricInstances; ++inst) {
    const std::size_t n = 3 + rng.below(60);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += std::fabs(a[i] - b[i]);
    note(mae(a, b), m / static_cast<double>(n));
    note(pearson(a, b).value, test::pearson_oracle(a, b));
    const auto box = box_stats(a);
    note(box.q1, test::quantile7_oracle(a, 0.25));
    note(box.median, test::quantile7_oracle(a, 0.5));
    note(box.q3, test::quantile7_oracle(a, 0.75));
    const auto t = paired_ttest(a, 0.05, 1);
    df_ok = df_ok && t.df == n - 1;
    note(t.p, test::t_two_sided_p(t.t, n - 1));
  }
  return verdict(worst <= kMetricTol && df_ok, std::to_string(kMetricInstances) + " instances, worst deviation " +
                                                   fmt(worst, 3) + ", df = n-1 " + (df_ok ? "everywhere" : "VIOLATED"));
}

Outcome snr() {
  const std::vector<double> x{0.5, -1.0, 2.0, 0.25};
  const double same = snr_db(x, x);
  const std::vector<double> sig{10.0, 0.0, 0.0}, small{1.0, 0.0, 0.0};
  const double twenty = snr_db(sig, small);
  return verdict(same == 0.0 && twenty == 20.0, "delta = x -> " + fmt(same) + " dB, energy ratio 1/100 -> " + fmt(twenty) + " dB");
}

Outcome reproducible(const ExperimentRun& first, const fs::path& dir) {
  const auto second = run_toy_experiment(dir);
  const bool same = first.report_json_bytes == second.report_json_bytes;
  return verdict(same, "report.json " + std::to_string(first.report_json_bytes.size()) + " bytes, rerun " +
                           (same ? "byte-identical" : "DIFFERS") + " (" + fmt(second.seconds / 60, 3) + " min)");
}

Outcome real_data(const fs::path& dir) {
  const char* path = std::getenv("MEROB_REAL_CONFIG");
  if (!path || !*path) return {Verdict::kSkip, "set MEROB_REAL_CONFIG to an audio experiment config to run"};
  auto cfg = load_config(path, default_config());
  cfg.out_dir = (dir / "real").string();
  Experiment ex(cfg, [](const std::string& m) { std::cerr << "  " << m << "\n"; });
  ex.bind_output();
  ex.prepare();
  for (const auto& run : table_runs()) ex.train(run);
  for (const auto& run : table_runs()) ex.attack(run);
  const auto rep = ex.report(table_runs());
  return verdict(rep.gaps.empty(), std::to_string(rep.runs.size()) + " runs reported, " +
                                       std::to_string(rep.gaps.size()) + " gaps");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("merob acceptance checks");
  std::string work = "acceptance_work";
  std::vector<std::string> only;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  // Caches must not be shared between the two experiment runs.
  ::unsetenv(kCacheRootEnv);
  const fs::path dir = fs::absolute(work);
  fs::create_directories(dir);
  const std::set<std::string> selected(only.begin(), only.end());
  auto wanted = [&](const std::string& n) { return selected.empty() || selected.count(n) > 0; };

  std::optional<ExperimentRun> experiment;
  auto toy_experiment = [&]() -> const ExperimentRun& {
    if (!experiment) experiment = run_toy_experiment(dir / "toy_run1");
    return *experiment;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradients", gradients},
      {"attack-oracles", attack_oracles},
      {"toy-attack-strength", toy_attack_strength},
      {"robustness-ordering", [&] { return robustness_ordering(toy_experiment()); }},
      {"clean-accuracy", [&] { return clean_accuracy(toy_experiment()); }},
      {"preprocessing", preprocessing},
      {"metric-oracles", metric_oracles},
      {"snr", snr},
      {"report-reproducible", [&] { return reproducible(toy_experiment(), dir / "toy_run2"); }},
      {"real-data", [&] { return real_data(dir); }},
  };

  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!wanted(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Verdict::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kFail ? "FAIL" : "SKIP";
    if (o.verdict == Verdict::kFail) ++failures;
    std::cout << tag << "  " << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
