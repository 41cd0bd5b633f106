#include <benchmark/benchmark.h>

#include "scinet/contrastive.hpp"
#include "scinet/extractors.hpp"
#include "scinet/generator.hpp"
#include "scinet/scin.hpp"
#include "scinet/training.hpp"

using namespace scinet;

namespace {

void BM_Adain(benchmark::State& state) {
  const int64_t side = state.range(0);
  auto c = torch::randn({1, 512, side, side});
  auto s = torch::randn({1, 512, side, side});
  for (auto _ : state) benchmark::DoNotOptimize(adain(c, s));
}
BENCHMARK(BM_Adain)->Arg(8)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_IclLoss(benchmark::State& state) {
  const int64_t n = state.range(0);
  auto codes = torch::randn({n * n, 128});
  auto other = torch::randn({n * n, 128});
  for (auto _ : state) benchmark::DoNotOptimize(icl_loss(codes, other, n));
}
BENCHMARK(BM_IclLoss)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMicrosecond);

void BM_PerceptionEncoder(benchmark::State& state) {
  const int64_t side = state.range(0);
  const int64_t divisor = state.range(1);
  PerceptionEncoder pe(512 / divisor, 8);
  auto img = torch::rand({1, 3, side, side});
  torch::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(pe->forward(img).stage2);
}
BENCHMARK(BM_PerceptionEncoder)->Args({64, 4})->Args({256, 1})->Unit(benchmark::kMillisecond);

void BM_Stylize(benchmark::State& state) {
  ModelConfig m;
  m.width_divisor = state.range(1);
  Generator g(m, VggEncoder(m.width_divisor));
  g->eval();
  const int64_t side = state.range(0);
  auto c = torch::rand({1, 3, side, side});
  auto s = torch::rand({1, 3, side, side});
  torch::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(c, s));
}
BENCHMARK(BM_Stylize)->Args({64, 4})->Args({256, 4})->Args({256, 1})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig c;
  c.model.width_divisor = state.range(0);
  c.grid_size = 4;
  std::vector<torch::Tensor> contents, styles;
  for (int i = 0; i < 4; ++i) {
    contents.push_back(torch::rand({1, 3, 64, 64}));
    styles.push_back(torch::rand({1, 3, 64, 64}));
  }
  const auto cds = Dataset::from_tensors(contents);
  const auto sds = Dataset::from_tensors(styles);
  Trainer trainer(c);
  int64_t step = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(trainer.step(sample_batch(cds, sds, 4, 64, c.seed, step++)).total);
  }
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(4)->Unit(benchmark::kMillisecond)->Iterations(3);

}  // namespace

BENCHMARK_MAIN();
