#include <benchmark/benchmark.h>

#include "merob/model.hpp"
#include "merob/ops.hpp"
#include "merob/rng.hpp"
#include "merob/spectrogram.hpp"

namespace {

merob::TensorF random_input(merob::Shape shape, std::uint64_t seed) {
  merob::Rng rng(seed);
  std::vector<float> v(merob::shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return merob::TensorF::from(std::move(shape), std::move(v));
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_input({8, c, 32, 64}, 1);
  const auto k = random_input({2 * c, c, 3, 3}, 2);
  const auto b = merob::TensorF::zeros({2 * c});
  for (auto _ : state) benchmark::DoNotOptimize(merob::conv2d(x, k, b, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(8)->Arg(16);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto x = random_input({8, 8, 32, 64}, 1);
  auto k = random_input({16, 8, 3, 3}, 2).clone(true);
  const auto b = merob::TensorF::zeros({16}, true);
  for (auto _ : state) {
    auto loss = merob::mean(merob::conv2d(x, k, b, 1, 1));
    loss.backward();
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_ModelStep(benchmark::State& state) {
  merob::ModelSpec spec;
  spec.variant = merob::Variant::kA2M2E;
  auto params = merob::build_model<float>(spec, 0);
  const auto x = random_input({8, 1, 32, 64}, 3);
  const auto ye = merob::TensorF::full({8, 8}, 0.5f);
  const auto ym = merob::TensorF::full({8, 7}, 0.5f);
  for (auto _ : state) {
    params.zero_grad();
    auto out = merob::forward(params, spec, x);
    auto loss = merob::training_loss(spec, out, ye, &ym);
    loss.backward();
  }
}
BENCHMARK(BM_ModelStep);

void BM_Spectrogram10s(benchmark::State& state) {
  merob::Waveform w;
  w.sample_rate = merob::kTargetSampleRate;
  merob::Rng rng(4);
  w.samples.resize(merob::kCropSamples);
  for (auto& s : w.samples) s = rng.uniform(-0.5, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(merob::spectrogram(w));
}
BENCHMARK(BM_Spectrogram10s)->Unit(benchmark::kMillisecond);

}  // namespace
