#include "merob/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "merob/errors.hpp"
#include "merob/ops.hpp"
#include "merob/rng.hpp"

namespace merob {

template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, double lr) {
  auto& layers = params.layers;
  if (state.m.empty()) {
    state.m.resize(layers.size());
    state.v.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      state.m[i].assign(layers[i].tensor.numel(), T(0));
      state.v[i].assign(layers[i].tensor.numel(), T(0));
    }
  }
  if (state.m.size() != layers.size()) throw UsageError("adam state does not match parameters");
  for (const auto& e : layers) {
    if (!e.tensor.has_grad()) continue;
    for (T g : e.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in layer " + e.name);
    }
  }

  ++state.step;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& t = layers[i].tensor;
    const bool has = t.has_grad();
    const auto g = has ? t.grad() : std::span<const T>{};
    auto w = t.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? static_cast<double>(g[k]) : 0.0;
      const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = lr * (mk / c1) / (std::sqrt(vk / c2) + state.cfg.epsilon);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
    }
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be > 0");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (n_seeds == 0) throw ConfigError("n_seeds must be >= 1");
  if (adversarial) {
    if (adversarial->every_n_epochs == 0) throw ConfigError("every_n_epochs must be >= 1");
    adversarial->attack.validate();
  }
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["adversarial_flag"] = e.adversarial;
    j["wall_time"] = e.wall_time;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

template <typename T>
const Tensor<T>* mid_ptr(const Batch<T>& b) {
  return b.y_midlevel ? &*b.y_midlevel : nullptr;
}

template <typename T>
double step_on(ModelParams<T>& params, AdamState<T>& adam, const ModelSpec& spec,
               const Tensor<T>& x, const Batch<T>& b, double lr) {
  params.zero_grad();
  auto out = forward(params, spec, x);
  auto loss = training_loss(spec, out, b.y_emotion, mid_ptr(b));
  const double l = static_cast<double>(loss.item());
  if (!std::isfinite(l)) throw NumericalError("non-finite training loss");
  loss.backward();
  adam_step(params, adam, lr);
  return l;
}

}  // namespace

template <typename T>
double dataset_loss(const ModelParams<T>& params, const ModelSpec& spec,
                    std::span<const Sample> data, std::span<const std::size_t> indices,
                    std::size_t chunk) {
  if (indices.empty()) throw UsageError("dataset_loss over an empty index set");
  chunk = std::max<std::size_t>(chunk, 1);
  double acc = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
    const auto b = make_batch<T>(data, part);
    const auto out = forward(params, spec, b.x, false);
    const auto loss = training_loss(spec, out, b.y_emotion, mid_ptr(b));
    acc += static_cast<double>(loss.item()) * static_cast<double>(part.size());
  }
  return acc / static_cast<double>(indices.size());
}

template <typename T>
TrainResult<T> train(const ModelSpec& spec, std::span<const Sample> data,
                     const DatasetSplit& split, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  spec.validate();
  if (split.train.empty() || split.val.empty()) {
    throw ConfigError("training needs non-empty train and validation splits");
  }
  if (spec.variant == Variant::kA2M2E) {
    for (auto i : split.train) {
      if (!data[i].y_midlevel) {
        throw ConfigError("A2M2E needs mid-level targets; clip " + data[i].clip_id + " has none");
      }
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  auto params = build_model<T>(spec, seed);
  AdamState<T> adam;
  TrainResult<T> result;
  auto& log = result.log;
  const std::size_t n_train = split.train.size();
  log.batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;

  const double initial_val = dataset_loss(params, spec, data, split.val);
  log.epochs.push_back({0, dataset_loss(params, spec, data, split.train), initial_val, false, elapsed()});
  result.params = params.clone();
  log.best_epoch = 0;
  log.best_val_loss = initial_val;

  std::vector<std::size_t> order(split.train.begin(), split.train.end());
  std::size_t wait = 0;
  const std::size_t patience = std::max<std::size_t>(cfg.patience, 1);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::copy(split.train.begin(), split.train.end(), order.begin());
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(std::span(order));
    const bool adversarial = cfg.adversarial && epoch % cfg.adversarial->every_n_epochs == 0;

    double acc = 0.0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const auto idx = std::span(order).subspan(start, std::min(cfg.batch_size, n_train - start));
      const auto b = make_batch<T>(data, idx);
      acc += step_on(params, adam, spec, b.x, b, cfg.learning_rate) * static_cast<double>(idx.size());
      if (adversarial) {
        const auto pert = bim_attack(params, spec, b.x, b.y_emotion, cfg.adversarial->attack, mid_ptr(b));
        ++log.attack_invocations;
        const auto x_adv = add(b.x, pert.delta);
        step_on(params, adam, spec, x_adv.detach(), b, cfg.learning_rate);
      }
    }
    const double val = dataset_loss(params, spec, data, split.val);
    log.epochs.push_back({epoch, acc / static_cast<double>(n_train), val, adversarial, elapsed()});
    if (val < log.best_val_loss) {
      log.best_val_loss = val;
      log.best_epoch = epoch;
      result.params = params.clone();
      wait = 0;
    } else if (++wait >= patience) {
      log.early_stopped = true;
      break;
    }
  }
  result.params.seed = seed;
  return result;
}

template <typename T>
TrainResult<T> train_clean(const ModelSpec& spec, std::span<const Sample> data,
                           const DatasetSplit& split, TrainConfig cfg, std::uint64_t seed) {
  cfg.adversarial.reset();
  return train<T>(spec, data, split, cfg, seed);
}

template <typename T>
TrainResult<T> train_adversarial(const ModelSpec& spec, std::span<const Sample> data,
                                 const DatasetSplit& split, TrainConfig cfg, std::uint64_t seed) {
  if (!cfg.adversarial) cfg.adversarial = AdversarialSchedule{};
  return train<T>(spec, data, split, cfg, seed);
}

#define MEROB_INSTANTIATE_TRAIN(T)                                                              \
  template void adam_step(ModelParams<T>&, AdamState<T>&, double);                              \
  template double dataset_loss(const ModelParams<T>&, const ModelSpec&, std::span<const Sample>, \
                               std::span<const std::size_t>, std::size_t);                      \
  template TrainResult<T> train(const ModelSpec&, std::span<const Sample>, const DatasetSplit&,  \
                                const TrainConfig&, std::uint64_t);                             \
  template TrainResult<T> train_clean(const ModelSpec&, std::span<const Sample>,                \
                                      const DatasetSplit&, TrainConfig, std::uint64_t);         \
  template TrainResult<T> train_adversarial(const ModelSpec&, std::span<const Sample>,          \
                                            const DatasetSplit&, TrainConfig, std::uint64_t);

MEROB_INSTANTIATE_TRAIN(float)
MEROB_INSTANTIATE_TRAIN(double)

#undef MEROB_INSTANTIATE_TRAIN

}  // namespace merob
