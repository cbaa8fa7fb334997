#include <benchmark/benchmark.h>

#include "vadforge/frontend.hpp"
#include "vadforge/model.hpp"
#include "vadforge/ops.hpp"
#include "vadforge/rng.hpp"

using namespace vadforge;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, bool grad = false) {
  Tensor<float> t(std::move(shape));
  Rng rng(seed);
  for (float& v : t.data()) v = float(rng.normal());
  t.set_requires_grad(grad);
  return t;
}

void BM_Linear(benchmark::State& state) {
  const auto rows = std::size_t(state.range(0));
  auto x = random_tensor({rows, 256}, 1);
  auto w = random_tensor({256, 256}, 2);
  auto b = random_tensor({256}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ops::linear(x, w, b).data().data());
  state.SetItemsProcessed(state.iterations() * std::int64_t(rows) * 256 * 256 * 2);
}
BENCHMARK(BM_Linear)->Arg(256)->Arg(2048);

void BM_Conv2dForward(benchmark::State& state) {
  const auto frames = std::size_t(state.range(0));
  auto x = random_tensor({1, 32, 128, frames}, 1);
  auto k = random_tensor({32, 32, 3, 3}, 2);
  auto b = random_tensor({32}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, k, b).data().data());
  state.SetItemsProcessed(state.iterations() * std::int64_t(32 * 128 * frames) * 32 * 9 * 2);
}
BENCHMARK(BM_Conv2dForward)->Arg(64)->Arg(256);

void BM_Conv2dBackward(benchmark::State& state) {
  auto x = random_tensor({1, 32, 128, 256}, 1, true);
  auto k = random_tensor({32, 32, 3, 3}, 2, true);
  auto b = random_tensor({32}, 3, true);
  for (auto _ : state) {
    GradTape<float> tape;
    Tensor<float> loss;
    {
      TapeScope<float> scope(tape);
      loss = ops::sum(ops::conv2d(x, k, b));
    }
    tape.backward(loss);
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward);

void BM_LogMel(benchmark::State& state) {
  dsp::Waveform w;
  Rng rng(4);
  w.samples.resize(8000 * 20);
  for (float& v : w.samples) v = float(0.1 * rng.normal());
  dsp::FrontendConfig cfg;
  cfg.normalize = false;
  for (auto _ : state) benchmark::DoNotOptimize(dsp::features(w, cfg).values.data());
}
BENCHMARK(BM_LogMel)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  const auto frames = std::size_t(state.range(0));
  model::VadModel<float> net(model::ModelConfig{}, 7);
  dsp::MelFrames mel{frames, 256, std::vector<float>(frames * 256)};
  Rng rng(5);
  for (float& v : mel.values) v = float(rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(net.predict(mel).probs.data());
}
BENCHMARK(BM_ModelForward)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto batch = std::size_t(state.range(0));
  model::VadModel<float> net(model::ModelConfig{}, 7);
  net.set_training(true);
  auto x = random_tensor({batch, 256, 256}, 8);
  Tensor<float> y(Shape{batch, 256}, 1.0f);
  for (auto _ : state) {
    GradTape<float> tape;
    Tensor<float> loss;
    {
      TapeScope<float> scope(tape);
      loss = ops::bce_with_logits(net.forward(x).logits, y);
    }
    net.zero_grad();
    tape.backward(loss);
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
