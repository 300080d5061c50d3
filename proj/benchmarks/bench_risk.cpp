#include <benchmark/benchmark.h>

#include "doublegen/experiment.hpp"
#include "doublegen/risk.hpp"
#include "doublegen/synth.hpp"

using namespace doublegen;

namespace {

struct Fixture {
  Dgp dgp = Dgp::gauss(GaussDgpParams{});
  FoldedDataset folded;
  std::array<NuisancePair, 2> nuisances;
  TimeConditionedNet net;

  explicit Fixture(long n) {
    RngStream data_rng(1, 1);
    const Dataset data = dgp.sample_observational(n, data_rng);
    RngStream fold_rng(1, 2);
    folded = partition_folds(data, fold_rng);
    nuisances = {dgp.oracle_nuisances(), dgp.oracle_nuisances()};
    RngStream init(1, 3);
    net = TimeConditionedNet(Mlp::random_init(4, 32, 1, init));
  }
};

LossFn flow_loss_fn(const TimeConditionedNet& net, int mc) {
  LossFn loss;
  loss.param_count = net.net().param_count();
  loss.value = [&net, mc](const Outcome& y, RngStream rng) {
    return flow_loss(field_of(net), y.reals(), rng, mc);
  };
  loss.value_and_grad = [&net, mc](const Outcome& y, RngStream rng, std::span<double> grad,
                                   double weight) {
    return flow_loss_grad(net, y.reals(), rng, mc, grad, weight);
  };
  return loss;
}

}  // namespace

static void BM_DoubleGenRiskValue(benchmark::State& state) {
  Fixture fx(state.range(0));
  RiskSpec spec;
  spec.mc_u = 4;
  const LossFn loss = flow_loss_fn(fx.net, 2);
  RiskProblem problem(loss, &fx.folded, &fx.nuisances, spec);
  const RngStream rng(7, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(problem.value(rng));
  }
}
BENCHMARK(BM_DoubleGenRiskValue)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_SampledGradientTerm(benchmark::State& state) {
  Fixture fx(2000);
  RiskSpec spec;
  spec.mc_u = 8;
  const LossFn loss = flow_loss_fn(fx.net, 2);
  RiskProblem problem(loss, &fx.folded, &fx.nuisances, spec);
  RngStream rng(8, 8);
  std::vector<double> grad(loss.param_count, 0.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(problem.sample_gradient_term(rng, grad));
  }
}
BENCHMARK(BM_SampledGradientTerm);

BENCHMARK_MAIN();
