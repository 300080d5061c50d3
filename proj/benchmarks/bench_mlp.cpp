#include <benchmark/benchmark.h>

#include "doublegen/mlp.hpp"
#include "doublegen/rng.hpp"

using namespace doublegen;

static void BM_MlpForward(benchmark::State& state) {
  RngStream rng(1, 0);
  const int hidden = static_cast<int>(state.range(0));
  const Mlp net = Mlp::random_init(4, hidden, 1, rng);
  MlpWorkspace ws;
  std::vector<double> in = {0.1, 0.2, -0.3, 0.4}, out(1);
  for (auto _ : state) {
    mlp_forward(net, in, out, &ws);
    benchmark::DoNotOptimize(out[0]);
  }
}
BENCHMARK(BM_MlpForward)->Arg(32)->Arg(64)->Arg(128);

static void BM_MlpForwardBackward(benchmark::State& state) {
  RngStream rng(1, 0);
  const int hidden = static_cast<int>(state.range(0));
  const Mlp net = Mlp::random_init(4, hidden, 1, rng);
  MlpWorkspace ws;
  std::vector<double> in = {0.1, 0.2, -0.3, 0.4}, out(1), cot = {1.0};
  std::vector<double> grad(net.param_count(), 0.0);
  for (auto _ : state) {
    mlp_forward(net, in, out, &ws);
    mlp_backward(net, ws, cot, grad);
    benchmark::DoNotOptimize(grad[0]);
  }
}
BENCHMARK(BM_MlpForwardBackward)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
