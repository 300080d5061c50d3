#include <benchmark/benchmark.h>

#include "doublegen/autoreg.hpp"
#include "doublegen/diffusion.hpp"
#include "doublegen/flow.hpp"
#include "doublegen/synth.hpp"

using namespace doublegen;

static void BM_FlowSampleRk4(benchmark::State& state) {
  const FieldFn field = gaussian_interpolation_field(1.0, 0.8);
  RngStream rng(1, 0);
  const std::vector<double> u = {rng.normal()};
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow_sample(field, u, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_FlowSampleRk4)->Arg(50)->Arg(100)->Arg(200);

static void BM_DiffusionSampleEm(benchmark::State& state) {
  const NoiseSchedule sched;
  const ScoreFn score = gaussian_score(1.0, 0.8, sched);
  RngStream rng(2, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(diffusion_sample(score, sched, 1, rng,
                                              static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_DiffusionSampleEm)->Arg(100)->Arg(200);

static void BM_AncestralSample(benchmark::State& state) {
  const auto params = default_token_params();
  RngStream rng(3, 0);
  std::vector<double> u(params.table_x1.d());
  for (auto _ : state) {
    rng.fill_uniform(u);
    benchmark::DoNotOptimize(ancestral_sample(params.table_x1, u));
  }
}
BENCHMARK(BM_AncestralSample);

BENCHMARK_MAIN();
