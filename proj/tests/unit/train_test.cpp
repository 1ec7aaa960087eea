#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "merob/config.hpp"
#include "merob/errors.hpp"
#include "merob/ops.hpp"
#include "merob/train.hpp"
#include "test_util.hpp"

namespace merob {
namespace {

ModelParams<double> scalar_params(double w) {
  ModelParams<double> p;
  p.layers.push_back({"w", TensorD::from({1}, {w}, true)});
  return p;
}

void set_grad(ModelParams<double>& p, double g) {
  p.zero_grad();
  auto& w = p.get("w");
  // d(g * w)/dw = g
  mul_scalar(sum(w), g).backward();
}

TEST(Adam, HandEvaluatedFirstStep) {
  auto p = scalar_params(1.0);
  AdamState<double> st;
  set_grad(p, 0.5);
  adam_step(p, st, 0.1);
  // m_hat = 0.5, v_hat = 0.25
  const double expected = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
  EXPECT_NEAR(p.get("w").values()[0], expected, 1e-15);
  EXPECT_NEAR(p.get("w").values()[0], 0.9, 1e-7);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, RecurrenceOverSeveralSteps) {
  auto p = scalar_params(0.3);
  AdamState<double> st;
  const std::vector<double> grads{0.7, 0.7, -0.2, 1.5, 0.0};
  double w = 0.3, m = 0, v = 0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    set_grad(p, grads[t - 1]);
    adam_step(p, st, 0.01);
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.get("w").values()[0], w, 1e-15) << "step " << t;
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = scalar_params(2.0);
  AdamState<double> st;
  set_grad(p, 0.0);
  adam_step(p, st, 0.1);
  EXPECT_EQ(p.get("w").values()[0], 2.0);
}

TEST(Adam, NonFiniteGradientNamesLayerAndKeepsParameters) {
  ModelParams<double> p;
  p.layers.push_back({"good", TensorD::from({1}, {1.0}, true)});
  p.layers.push_back({"bad", TensorD::from({1}, {1.0}, true)});
  mul_scalar(sum(p.get("good")), 1.0).backward();
  mul_scalar(sum(p.get("bad")), std::numeric_limits<double>::infinity()).backward();
  AdamState<double> st;
  try {
    adam_step(p, st, 0.1);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
  EXPECT_EQ(p.get("good").values()[0], 1.0);
  EXPECT_EQ(st.step, 0u);
}

struct SmallProblem {
  std::vector<Sample> data;
  DatasetSplit split;
  ModelSpec spec;

  explicit SmallProblem(Variant v, std::size_t n = 60) {
    SynthConfig sc;
    sc.n = n;
    sc.freq_bins = 16;
    sc.frames = 16;
    data = synth_dataset(sc);
    split = make_split(n, 0);
    spec.variant = v;
    spec.conv_blocks = {{4, 3, 2}, {8, 3, 2}};
    spec.embedding_dim = 8;
  }
};

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.learning_rate = 0.003;
  c.max_epochs = epochs;
  c.patience = 100;
  return c;
}

bool same_params(const ModelParams<float>& a, const ModelParams<float>& b) {
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i].tensor;
    if (std::memcmp(x.values().data(), b.layers[i].tensor.values().data(), x.numel() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

TEST(Train, LossDecreasesForEveryVariant) {
  for (auto v : {Variant::kA2E, Variant::kA2B2E, Variant::kA2M2E}) {
    SmallProblem pr(v);
    const auto r = train<float>(pr.spec, pr.data, pr.split, quick(8), 1);
    EXPECT_LT(r.log.epochs.back().train_loss, r.log.epochs.front().train_loss) << to_string(v);
    EXPECT_EQ(r.log.epochs.front().epoch, 0u);
    EXPECT_EQ(r.log.epochs_run(), 8u);
  }
}

TEST(Train, BestParametersMatchBestValidationLoss) {
  SmallProblem pr(Variant::kA2B2E);
  auto cfg = quick(10);
  cfg.learning_rate = 0.05;  // noisy on purpose so validation loss goes up somewhere
  const auto r = train<float>(pr.spec, pr.data, pr.split, cfg, 2);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : r.log.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(r.log.best_val_loss, best);
  EXPECT_EQ(dataset_loss(r.params, pr.spec, pr.data, pr.split.val), best);
}

TEST(Train, PatienceZeroStopsAtFirstNonImprovingEpoch) {
  SmallProblem pr(Variant::kA2E);
  auto cfg = quick(60);
  cfg.patience = 0;
  cfg.learning_rate = 0.05;
  const auto r = train<float>(pr.spec, pr.data, pr.split, cfg, 3);
  const auto& ep = r.log.epochs;
  ASSERT_TRUE(r.log.early_stopped);
  double best = ep[0].val_loss;
  for (std::size_t i = 1; i + 1 < ep.size(); ++i) {
    EXPECT_LT(ep[i].val_loss, best) << "epoch " << i;
    best = ep[i].val_loss;
  }
  EXPECT_GE(ep.back().val_loss, best);
}

TEST(Train, DeterministicLogAndParameters) {
  SmallProblem pr(Variant::kA2M2E);
  const auto a = train<float>(pr.spec, pr.data, pr.split, quick(3), 4);
  const auto b = train<float>(pr.spec, pr.data, pr.split, quick(3), 4);
  ASSERT_EQ(a.log.epochs.size(), b.log.epochs.size());
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    EXPECT_EQ(a.log.epochs[i].train_loss, b.log.epochs[i].train_loss);
    EXPECT_EQ(a.log.epochs[i].val_loss, b.log.epochs[i].val_loss);
  }
  EXPECT_TRUE(same_params(a.params, b.params));
  const auto c = train<float>(pr.spec, pr.data, pr.split, quick(3), 5);
  EXPECT_FALSE(same_params(a.params, c.params));
}

TEST(Train, ErrorsForMissingTargetsAndEmptySplits) {
  SmallProblem pr(Variant::kA2M2E);
  auto data = pr.data;
  data[pr.split.train[0]].y_midlevel.reset();
  EXPECT_THROW(train<float>(pr.spec, data, pr.split, quick(1), 0), ConfigError);
  auto split = pr.split;
  split.val.clear();
  EXPECT_THROW(train<float>(pr.spec, pr.data, split, quick(1), 0), ConfigError);
  auto bad = quick(1);
  bad.batch_size = 0;
  EXPECT_THROW(train<float>(pr.spec, pr.data, pr.split, bad, 0), ConfigError);
}

TEST(Train, JsonLinesCarryTheDocumentedKeys) {
  SmallProblem pr(Variant::kA2E);
  const auto r = train<float>(pr.spec, pr.data, pr.split, quick(2), 0);
  const auto text = r.log.to_jsonl();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  for (const char* key : {"\"epoch\"", "\"train_loss\"", "\"val_loss\"", "\"adversarial_flag\"", "\"wall_time\""})
    EXPECT_NE(text.find(key), std::string::npos) << key;
}

AdversarialSchedule schedule(std::size_t every, double eps, std::size_t iters) {
  AdversarialSchedule s;
  s.every_n_epochs = every;
  s.attack.epsilon = eps;
  s.attack.eta = 0.005;
  s.attack.max_iterations = iters;
  s.attack.stop = StopRule::none();
  return s;
}

TEST(Adversarial, AttackInvocationCount) {
  SmallProblem pr(Variant::kA2B2E);
  auto cfg = quick(7);
  cfg.adversarial = schedule(3, 0.02, 2);
  const auto r = train<float>(pr.spec, pr.data, pr.split, cfg, 6);
  EXPECT_EQ(r.log.attack_invocations, (r.log.epochs_run() / 3) * r.log.batches_per_epoch);
  EXPECT_EQ(r.log.batches_per_epoch, (pr.split.train.size() + 7) / 8);
  for (const auto& e : r.log.epochs) EXPECT_EQ(e.adversarial, e.epoch > 0 && e.epoch % 3 == 0);
}

TEST(Adversarial, ScheduleBeyondMaxEpochsEqualsClean) {
  SmallProblem pr(Variant::kA2E);
  auto cfg = quick(3);
  const auto clean = train_clean<float>(pr.spec, pr.data, pr.split, cfg, 7);
  cfg.adversarial = schedule(4, 0.02, 3);
  const auto adv = train_adversarial<float>(pr.spec, pr.data, pr.split, cfg, 7);
  EXPECT_EQ(adv.log.attack_invocations, 0u);
  EXPECT_TRUE(same_params(clean.params, adv.params));
}

// Reference loop: on scheduled epochs every batch gets two identical clean steps.
ModelParams<float> two_clean_steps_reference(const SmallProblem& pr, const TrainConfig& cfg,
                                             std::size_t every, std::uint64_t seed) {
  auto params = build_model<float>(pr.spec, seed);
  AdamState<float> adam;
  auto best = params.clone();
  double best_val = dataset_loss(params, pr.spec, pr.data, pr.split.val);
  std::vector<std::size_t> order(pr.split.train);
  auto step = [&](const Batch<float>& b) {
    params.zero_grad();
    auto out = forward(params, pr.spec, b.x);
    training_loss(pr.spec, out, b.y_emotion, b.y_midlevel ? &*b.y_midlevel : nullptr).backward();
    adam_step(params, adam, cfg.learning_rate);
  };
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    order = pr.split.train;
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(std::span(order));
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const auto idx = std::span(order).subspan(s, std::min(cfg.batch_size, order.size() - s));
      const auto b = make_batch<float>(pr.data, idx);
      step(b);
      if (epoch % every == 0) step(b);
    }
    const double val = dataset_loss(params, pr.spec, pr.data, pr.split.val);
    if (val < best_val) {
      best_val = val;
      best = params.clone();
    }
  }
  return best;
}

TEST(Adversarial, ZeroEpsilonEqualsTwoCleanSteps) {
  SmallProblem pr(Variant::kA2M2E);
  auto cfg = quick(4);
  cfg.adversarial = schedule(2, 0.0, 3);
  const auto adv = train<float>(pr.spec, pr.data, pr.split, cfg, 8);
  EXPECT_TRUE(same_params(adv.params, two_clean_steps_reference(pr, cfg, 2, 8)));
}

TEST(Train, ToyPresetHalvesTrainingLossIn50Epochs) {
  const auto toy = toy_preset();
  const auto data = synth_dataset(toy.data.synthetic);
  const auto split = make_split(data.size(), toy.data.split_seed);
  auto cfg = toy.train;
  cfg.max_epochs = 50;
  cfg.patience = 50;
  const auto spec = toy.spec_for(Variant::kA2B2E);
  const auto r = train_clean<float>(spec, data, split, cfg, 0);
  const double initial = r.log.epochs.front().train_loss;
  const double final_loss = dataset_loss(r.params, spec, data, split.train);
  EXPECT_LT(final_loss, 0.5 * initial);
}

}  // namespace
}  // namespace merob
