#include <benchmark/benchmark.h>

#include "merob/attack.hpp"
#include "merob/rng.hpp"

namespace {

void BM_AttackIterations(benchmark::State& state) {
  merob::ModelSpec spec;
  spec.variant = merob::Variant::kA2B2E;
  const auto params = merob::build_model<float>(spec, 0);
  merob::Rng rng(5);
  std::vector<float> xv(8 * 32 * 64);
  for (auto& v : xv) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto x = merob::TensorF::from({8, 1, 32, 64}, xv);
  const auto y = merob::TensorF::full({8, 8}, 0.5f);
  merob::AttackConfig cfg;
  cfg.epsilon = 0.02;
  cfg.eta = 0.005;
  cfg.max_iterations = static_cast<std::size_t>(state.range(0));
  cfg.stop = merob::StopRule::none();
  for (auto _ : state) benchmark::DoNotOptimize(merob::bim_attack(params, spec, x, y, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AttackIterations)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
