// merob: command-line driver for the robustness workbench.
//
//   merob prepare  --preset toy --out runs/toy
//   merob train    --preset toy --out runs/toy [--variant a2b2e] [--adversarial]
//   merob attack   --preset toy --out runs/toy
//   merob report   --preset toy --out runs/toy
//   merob gradcheck

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "merob/config.hpp"
#include "merob/errors.hpp"
#include "merob/experiment.hpp"
#include "merob/gradcheck.hpp"
#include "merob/ops.hpp"

namespace {

struct Options {
  std::string config_path;
  std::string preset;
  std::string out;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> workers;
  std::string variant;
  bool adversarial = false;
  bool inject_conv_fault = false;
};

merob::ExperimentConfig resolve(const Options& o) {
  auto cfg = o.preset.empty() ? merob::default_config() : merob::preset(o.preset);
  if (!o.config_path.empty()) cfg = merob::load_config(o.config_path, cfg);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.seeds) cfg.train.n_seeds = *o.seeds;
  if (o.workers) cfg.workers = *o.workers;
  cfg.validate();
  return cfg;
}

std::vector<merob::RunId> selected_runs(const Options& o) {
  if (o.variant.empty()) {
    if (o.adversarial) {
      return {{merob::Variant::kA2E, true}, {merob::Variant::kA2B2E, true}};
    }
    return merob::table_runs();
  }
  return {{merob::parse_variant(o.variant), o.adversarial}};
}

void log_line(const std::string& s) { std::cerr << "[merob] " << s << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Music emotion regression robustness workbench"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "Built-in preset (toy)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seeds", o.seeds, "Number of training seeds")->check(CLI::PositiveNumber);
    sub->add_option("--workers", o.workers, "Parallel workers")->check(CLI::PositiveNumber);
  };
  auto add_run_select = [&](CLI::App* sub) {
    sub->add_option("--variant", o.variant, "Model variant")
        ->check(CLI::IsMember({"a2e", "a2b2e", "a2m2e"}));
    sub->add_flag("--adversarial", o.adversarial, "Select the adversarially trained run");
  };

  auto* prepare = app.add_subcommand("prepare", "Build the spectrogram cache from the configured source");
  add_common(prepare);
  auto* synth = app.add_subcommand("synth", "Build a synthetic corpus cache");
  add_common(synth);
  auto* train = app.add_subcommand("train", "Train every missing seed (all table runs by default)");
  add_common(train);
  add_run_select(train);
  auto* attack = app.add_subcommand("attack", "Attack the test split of every trained seed");
  add_common(attack);
  add_run_select(attack);
  auto* report = app.add_subcommand("report", "Write the report bundle from existing run artifacts");
  add_common(report);
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of all ops and models");
  gradcheck->add_option("--seeds", o.seeds, "Random instances per op")->check(CLI::PositiveNumber);
  gradcheck->add_flag("--inject-conv-fault", o.inject_conv_fault,
                      "Negate the conv input gradient (demonstrates a failing check)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(merob::ExitCode::kConfig);
  }

  try {
    if (gradcheck->parsed()) {
      merob::GradCheckOptions gopts;
      if (o.seeds) gopts.n_seeds = *o.seeds;
      merob::fault::set_conv_backward_sign_flip(o.inject_conv_fault);
      const auto r = merob::run_gradcheck(gopts);
      std::cout << r.summary();
      return r.pass() ? 0 : static_cast<int>(merob::ExitCode::kFailure);
    }

    auto cfg = resolve(o);
    if (synth->parsed()) cfg.data.kind = merob::DataKind::kSynthetic;
    merob::Experiment exp(cfg, log_line);
    exp.bind_output();

    if (prepare->parsed() || synth->parsed()) {
      const auto n = exp.prepare(synth->parsed());
      std::cout << n << " clips in " << exp.cache_dir().string() << "\n";
    } else if (train->parsed()) {
      for (const auto& run : selected_runs(o)) exp.train(run);
    } else if (attack->parsed()) {
      for (const auto& run : selected_runs(o)) exp.attack(run);
    } else if (report->parsed()) {
      const auto rep = exp.report(merob::table_runs());
      std::cout << merob::table1_markdown(rep);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(merob::exit_code(e));
  }
}
