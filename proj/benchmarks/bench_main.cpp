#include <benchmark/benchmark.h>

#include "lfa/evalx.hpp"
#include "lfa/training.hpp"

namespace {

lfa::Tensor random_image(int channels, int extent, uint64_t seed) {
  lfa::Tensor t({1, channels, extent, extent}, 0.0f);
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  lfa::fill_uniform(t, rng, 0.0f, 1.0f);
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  std::mt19937 rng(7);
  lfa::ConvParams p = lfa::make_conv(c, c, 3, rng);
  lfa::Tensor x = random_image(c, hw, 11);
  for (auto _ : state) {
    lfa::Graph g(lfa::Mode::Infer);
    lfa::NodeId in = g.leaf(x);
    benchmark::DoNotOptimize(g.value(lfa::conv2d(g, in, p)).data());
  }
}
BENCHMARK(BM_Conv3x3)->Args({32, 64})->Args({32, 128})->Args({64, 64});

void BM_ModelForward(benchmark::State& state) {
  const int extent = static_cast<int>(state.range(0));
  lfa::ModelConfig cfg;
  lfa::Model m = lfa::build_model(cfg, 7);
  lfa::Tensor x = random_image(cfg.in_channels, extent, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lfa::model_forward(m, x, lfa::Mode::Infer).data());
  }
}
BENCHMARK(BM_ModelForward)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  lfa::ModelConfig cfg;
  lfa::Model m = lfa::build_model(cfg, 7);
  lfa::NamedTensors params = m.trainable();
  lfa::Tensor x = random_image(cfg.in_channels, 64, 11);
  lfa::Tensor mask({1, 1, 64, 64}, 0.0f);
  for (long long i = 0; i < mask.size(); i += 3) mask.data()[i] = 1.0f;
  lfa::DiceLossConfig loss_cfg;
  lfa::AdamState adam;
  adam.init(params);
  for (auto _ : state) {
    lfa::Graph g(lfa::Mode::Train, 5);
    lfa::NodeId in = g.leaf(x);
    lfa::NodeId out = lfa::model_forward(g, in, m);
    lfa::DiceLossResult loss = lfa::weighted_dice_loss(g.value(out), mask, loss_cfg);
    g.backward(out, loss.grad);
    lfa::adam_step(params, adam);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
