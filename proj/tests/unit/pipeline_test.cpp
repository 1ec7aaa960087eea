#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <string>

#include <sys/wait.h>

#include "merob/config.hpp"
#include "merob/errors.hpp"
#include "merob/experiment.hpp"
#include "merob/report.hpp"
#include "merob/rng.hpp"
#include "test_util.hpp"

namespace merob {
namespace {

namespace fs = std::filesystem;

ExperimentConfig tiny_config(const fs::path& out) {
  auto c = toy_preset();
  c.data.synthetic.n = 40;
  c.data.synthetic.freq_bins = 16;
  c.data.synthetic.frames = 16;
  c.model.conv_blocks = {{4, 3, 2}, {8, 3, 2}};
  c.model.embedding_dim = 8;
  c.train.max_epochs = 2;
  c.train.n_seeds = 2;
  c.train.adversarial->every_n_epochs = 2;
  c.train.adversarial->attack.max_iterations = 2;
  c.attack.max_iterations = 3;
  c.out_dir = out.string();
  return c;
}

TEST(Config, DigestTracksSemanticFieldsOnly) {
  const auto base = toy_preset();
  auto c = base;
  c.out_dir = "elsewhere";
  c.workers = 7;
  EXPECT_EQ(c.digest(), base.digest());
  c = base;
  c.train.learning_rate *= 2;
  EXPECT_NE(c.digest(), base.digest());
  c = base;
  c.attack.epsilon = 0.03;
  EXPECT_NE(c.digest(), base.digest());
  EXPECT_EQ(c.data_digest(), base.data_digest());
  c = base;
  c.data.synthetic.seed = 1;
  EXPECT_NE(c.data_digest(), base.data_digest());
}

TEST(Config, JsonRoundTripAndStrictParsing) {
  const auto c = toy_preset();
  const auto text = config_to_json(c);
  EXPECT_NE(text.find("\"schema_version\""), std::string::npos);
  const auto back = config_from_json(text, default_config());
  EXPECT_EQ(back.digest(), c.digest());
  EXPECT_EQ(config_to_json(back), text);

  EXPECT_THROW(config_from_json(R"({"bogus": 1})", c), ConfigError);
  EXPECT_THROW(config_from_json(R"({"train": {"learning_rate": "fast"}})", c), ConfigError);
  EXPECT_THROW(config_from_json(R"({"schema_version": 99})", c), ConfigError);
  EXPECT_THROW(config_from_json("{not json", c), ConfigError);
  const auto partial = config_from_json(R"({"seed_base": 5})", c);
  EXPECT_EQ(partial.seed_base, 5u);
  EXPECT_EQ(partial.train.learning_rate, c.train.learning_rate);
  EXPECT_THROW(preset("nope"), ConfigError);
}

RunPredictions fake_run(const std::string& name, std::size_t seeds, double clean_err, double adv_err,
                        std::uint64_t salt) {
  RunPredictions r;
  r.name = name;
  Rng rng(salt);
  for (std::size_t s = 0; s < seeds; ++s) {
    SeedPredictions p;
    p.seed = s;
    for (std::size_t i = 0; i < 6; ++i) {
      p.clip_ids.push_back("c" + std::to_string(i));
      p.snr_db.push_back(30.0 + static_cast<double>(i));
      for (std::size_t e = 0; e < 8; ++e) {
        const double t = rng.uniform();
        p.truth.push_back(t);
        p.clean.push_back(t + clean_err * rng.uniform(-1, 1));
        p.adversarial.push_back(t + adv_err * rng.uniform(-1, 1));
      }
    }
    r.seeds.push_back(p);
  }
  return r;
}

TEST(Report, DeltaMaeIsAdvMinusCleanAndPairsAreTested) {
  const std::vector<RunPredictions> runs{fake_run("a2e", 3, 0.02, 0.1, 1), fake_run("a2b2e", 3, 0.02, 0.08, 2),
                                         fake_run("a2m2e", 3, 0.02, 0.05, 3)};
  const auto rep = compute_report(runs, "abc");
  ASSERT_EQ(rep.runs.size(), 3u);
  for (const auto& r : rep.runs)
    for (const auto& s : r.seeds) EXPECT_NEAR(s.delta_mae, s.adv_mae - s.clean_mae, 1e-15);
  ASSERT_EQ(rep.ttests.size(), 2u);
  for (const auto& t : rep.ttests) {
    EXPECT_EQ(t.n_pairs, 18u);
    EXPECT_EQ(t.result.df, 17u);
    EXPECT_EQ(t.result.threshold, kReportAlpha / 2);
  }
  EXPECT_EQ(report_json(rep), report_json(compute_report(runs, "abc")));
}

TEST(Report, GapsAndSingleSeed) {
  std::vector<RunPredictions> runs{fake_run("a2e", 1, 0.02, 0.1, 1)};
  runs[0].seeds[0].adversarial.clear();
  const auto rep = compute_report(runs, "abc");
  EXPECT_FALSE(rep.gaps.empty());
  EXPECT_TRUE(rep.ttests.empty());
  EXPECT_EQ(rep.runs[0].clean_mae.std, 0.0);
  EXPECT_FALSE(rep.runs[0].delta_mae.has_value());
  EXPECT_FALSE(table1_markdown(rep).empty());
}

TEST(Report, PredictionsCsvRoundTrip) {
  const auto run = fake_run("a2e", 1, 0.02, 0.1, 9);
  const auto& p = run.seeds[0];
  const auto back = parse_predictions_csv(predictions_csv(p));
  EXPECT_EQ(back.clip_ids, p.clip_ids);
  EXPECT_EQ(back.truth, p.truth);
  EXPECT_EQ(back.clean, p.clean);
  EXPECT_EQ(back.adversarial, p.adversarial);
}

TEST(Report, BundleFiles) {
  const std::vector<RunPredictions> runs{fake_run("a2e", 2, 0.02, 0.1, 1), fake_run("a2m2e", 2, 0.02, 0.05, 3)};
  const auto dir = test::scratch_dir("bundle");
  write_report_bundle(compute_report(runs, "abc"), runs, dir);
  for (const char* f : {"report.json", "table1.md", "delta_mae_box.svg", "predictions_a2e_0.csv",
                        "predictions_a2m2e_1.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  std::size_t scatters = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().starts_with("scatter_")) ++scatters;
  EXPECT_EQ(scatters, 8u);
}

TEST(RunIds, NamesRoundTrip) {
  for (const auto& r : table_runs()) EXPECT_EQ(parse_run(r.name()), r);
  EXPECT_EQ(table_runs().size(), 5u);
  EXPECT_THROW(parse_run("xyz"), ConfigError);
}

TEST(Experiment, ResumeSkipsCompletedSeedsAndRejectsDigestChange) {
  const auto dir = test::scratch_dir("resume");
  auto cfg = tiny_config(dir);
  {
    Experiment ex(cfg);
    ex.bind_output();
    EXPECT_EQ(ex.prepare(), 40u);
    const RunId run{Variant::kA2B2E, false};
    ex.train(run);
    EXPECT_TRUE(ex.seed_trained(run, 0));
    EXPECT_TRUE(ex.seed_trained(run, 1));
    const auto stamp = fs::last_write_time(ex.seed_dir(run, 0) / "checkpoint.bin");
    ex.train(run);
    EXPECT_EQ(fs::last_write_time(ex.seed_dir(run, 0) / "checkpoint.bin"), stamp);
    ex.attack(run);
    EXPECT_TRUE(ex.seed_attacked(run, 1));
    const auto rep = ex.report({run});
    EXPECT_TRUE(fs::exists(dir / "report" / "report.json"));
    EXPECT_EQ(rep.config_digest, hex_digest(cfg.digest()));
  }
  auto changed = cfg;
  changed.train.learning_rate = 0.5;
  Experiment other(changed);
  EXPECT_THROW(other.bind_output(), ConfigError);
}

TEST(Experiment, CacheRootEnvironmentVariable) {
  const auto out = test::scratch_dir("cache_out");
  const auto root = test::scratch_dir("cache_root");
  ::setenv(kCacheRootEnv, root.c_str(), 1);
  Experiment ex(tiny_config(out));
  const auto cache = ex.cache_dir();
  ::unsetenv(kCacheRootEnv);
  EXPECT_EQ(cache.parent_path(), root);
  Experiment plain(tiny_config(out));
  EXPECT_EQ(plain.cache_dir(), out / "cache");
}

#ifdef MEROB_CLI
int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MEROB_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("gradcheck --seeds 1"), 0);
  EXPECT_EQ(run_cli("gradcheck --seeds 1 --inject-conv-fault"), 1);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  EXPECT_EQ(run_cli("train --preset nope"), 2);
  const auto dir = test::scratch_dir("cli_cfg");
  write_text(dir / "bad.json", R"({"bogus": true})");
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string()), 2);
}
#endif

}  // namespace
}  // namespace merob
