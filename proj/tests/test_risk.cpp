#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "doublegen/autoreg.hpp"
#include "doublegen/risk.hpp"
#include "doublegen/synth.hpp"

using namespace doublegen;

namespace {

LossFn ce_loss_fn(const NextTokenModel* table) {
  LossFn loss;
  loss.param_count = table->logits().size();
  loss.value = [table](const Outcome& y, RngStream) { return ce_loss(*table, y.token_seq()); };
  loss.value_and_grad = [table](const Outcome& y, RngStream, std::span<double> grad,
                                double weight) {
    ce_loss_grad(*table, y.token_seq(), grad, weight);
    return ce_loss(*table, y.token_seq());
  };
  return loss;
}

NextTokenModel random_table(int k, int d, RngStream& rng, double scale = 1.0) {
  NextTokenModel model(k, d);
  for (auto& l : model.logits()) l = scale * rng.normal();
  model.sync_probs();
  return model;
}

std::array<NuisancePair, 2> constant_nuisances(double alpha, OutcomeSampler psi) {
  std::array<NuisancePair, 2> nuis;
  for (int j = 0; j < 2; ++j) {
    nuis[j].alpha = [alpha](std::span<const double>) { return alpha; };
    nuis[j].psi = psi;
  }
  return nuis;
}

FoldedDataset two_point_folded() {
  FoldedDataset folded;
  folded.fold1.push_back({{0.0}, 1, Outcome::tokens({2, 3, 1})});
  folded.fold2.push_back({{1.0}, 0, Outcome::tokens({3, 1, 1})});
  return folded;
}

OutcomeSampler point_mass_sampler(Outcome atom) {
  Dataset treated;
  treated.push_back({{0.0}, 1, std::move(atom)});
  return OutcomeSampler::knn(std::move(treated), 1);
}

}  // namespace

TEST_CASE("unit inverse propensity makes the psi terms cancel") {
  RngStream trng(1, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);

  FoldedDataset folded;
  folded.fold1.push_back({{0.0}, 1, Outcome::tokens({2, 2, 3})});
  folded.fold2.push_back({{0.0}, 1, Outcome::tokens({2, 3, 1})});
  const auto nuis = constant_nuisances(1.0, point_mass_sampler(Outcome::tokens({3, 1, 1})));

  RiskSpec spec;
  spec.mc_u = 16;
  const double risk = doublegen_risk(loss, folded, nuis, spec, RngStream(5, 5));
  const double direct = 0.5 * (ce_loss(theta, {2, 2, 3}) + ce_loss(theta, {2, 3, 1}));
  CHECK(risk == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("aipw risk matches a hand-enumerated sum with atomic psi") {
  RngStream trng(2, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);
  const FoldedDataset folded = two_point_folded();

  // k = 1 sampler: every u maps to the same atom, so the Monte Carlo average
  // over u is exact and the whole risk can be assembled by hand.
  const TokenSeq atom = {2, 2, 3};
  const double alpha = 3.25;
  const auto nuis = constant_nuisances(alpha, point_mass_sampler(Outcome::tokens(atom)));

  RiskSpec spec;
  spec.mc_u = 4;
  const double risk = doublegen_risk(loss, folded, nuis, spec, RngStream(9, 9));

  const double l_atom = ce_loss(theta, atom);
  const double l_y1 = ce_loss(theta, {2, 3, 1});  // the treated observation
  // Treated site: alpha (l(y) - l(psi)) + l(psi). Untreated site: l(psi).
  const double expected = 0.5 * ((alpha * (l_y1 - l_atom) + l_atom) + l_atom);
  CHECK(risk == doctest::Approx(expected).epsilon(1e-12));

  // Plug-in drops the correction entirely.
  spec.variant = RiskVariant::plug_in;
  CHECK(doublegen_risk(loss, folded, nuis, spec, RngStream(9, 9)) ==
        doctest::Approx(l_atom).epsilon(1e-12));

  // IPW keeps only the weighted factual term.
  spec.variant = RiskVariant::ipw;
  CHECK(doublegen_risk(loss, folded, nuis, spec, RngStream(9, 9)) ==
        doctest::Approx(0.5 * alpha * l_y1).epsilon(1e-12));
}

TEST_CASE("plug-in risk averages psi losses over the u draws") {
  RngStream trng(3, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);
  const FoldedDataset folded = two_point_folded();

  // Two atoms at equal distance; their mean loss is the exact expectation.
  Dataset treated;
  treated.push_back({{0.0}, 1, Outcome::tokens({2, 3, 1})});
  treated.push_back({{0.0}, 1, Outcome::tokens({3, 1, 1})});
  const auto nuis = constant_nuisances(1.0, OutcomeSampler::knn(std::move(treated), 2));

  RiskSpec spec;
  spec.variant = RiskVariant::plug_in;
  spec.mc_u = 4000;
  const double risk = doublegen_risk(loss, folded, nuis, spec, RngStream(4, 4));
  const double la = ce_loss(theta, {2, 3, 1});
  const double lb = ce_loss(theta, {3, 1, 1});
  const double exact = 0.5 * (la + lb);
  const double atom_sd = 0.5 * std::abs(la - lb);
  CHECK(std::abs(risk - exact) <= 4.0 * atom_sd / std::sqrt(4000.0));
}

TEST_CASE("ablation switches reproduce plug-in and ipw bitwise") {
  RngStream trng(4, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);

  const Dgp dgp = Dgp::token(default_token_params());
  RngStream data_rng(21, 1);
  const Dataset data = dgp.sample_observational(301, data_rng);
  RngStream fold_rng(21, 2);
  const FoldedDataset folded = partition_folds(data, fold_rng);
  const std::array<NuisancePair, 2> nuis = {dgp.oracle_nuisances(), dgp.oracle_nuisances()};

  const RngStream rng(77, 0);
  RiskSpec dg;
  dg.mc_u = 8;

  RiskSpec dg_zero_alpha = dg;
  dg_zero_alpha.zero_alpha = true;
  RiskSpec plugin = dg;
  plugin.variant = RiskVariant::plug_in;
  CHECK(doublegen_risk(loss, folded, nuis, dg_zero_alpha, rng) ==
        doublegen_risk(loss, folded, nuis, plugin, rng));

  RiskSpec dg_zero_psi = dg;
  dg_zero_psi.zero_psi_terms = true;
  RiskSpec ipw = dg;
  ipw.variant = RiskVariant::ipw;
  CHECK(doublegen_risk(loss, folded, nuis, dg_zero_psi, rng) ==
        doublegen_risk(loss, folded, nuis, ipw, rng));
}

TEST_CASE("naive risk averages treated losses and rejects empty treatment") {
  RngStream trng(5, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);

  FoldedDataset folded;
  folded.fold1.push_back({{0.0}, 1, Outcome::tokens({2, 3, 1})});
  folded.fold2.push_back({{0.0}, 0, Outcome::tokens({3, 1, 1})});
  folded.fold2.push_back({{0.0}, 1, Outcome::tokens({2, 2, 2})});

  RiskSpec spec;
  spec.variant = RiskVariant::naive;
  const auto nuis = constant_nuisances(1.0, point_mass_sampler(Outcome::tokens({3, 1, 1})));
  const double risk = doublegen_risk(loss, folded, nuis, spec, RngStream(1, 1));
  CHECK(risk == doctest::Approx(0.5 * (ce_loss(theta, {2, 3, 1}) + ce_loss(theta, {2, 2, 2})))
                    .epsilon(1e-12));

  FoldedDataset untreated;
  untreated.fold1.push_back({{0.0}, 0, Outcome::tokens({2, 3, 1})});
  untreated.fold2.push_back({{0.0}, 0, Outcome::tokens({3, 1, 1})});
  CHECK_THROWS_AS(doublegen_risk(loss, untreated, nuis, spec, RngStream(1, 1)),
                  std::runtime_error);
}

TEST_CASE("oracle variant is the mean loss over the counterfactual sample") {
  RngStream trng(6, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);
  const FoldedDataset folded = two_point_folded();
  const auto nuis = constant_nuisances(1.0, point_mass_sampler(Outcome::tokens({3, 1, 1})));

  const std::vector<Outcome> cf = {Outcome::tokens({2, 2, 3}), Outcome::tokens({3, 1, 1}),
                                   Outcome::tokens({2, 3, 1})};
  RiskSpec spec;
  spec.variant = RiskVariant::oracle;
  const double risk = doublegen_risk(loss, folded, nuis, spec, RngStream(2, 2), cf);
  const double expected = (ce_loss(theta, {2, 2, 3}) + ce_loss(theta, {3, 1, 1}) +
                           ce_loss(theta, {2, 3, 1})) /
                          3.0;
  CHECK(risk == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(doublegen_risk(loss, folded, nuis, spec, RngStream(2, 2)),
                  std::invalid_argument);
}

TEST_CASE("all-treated data with unit alpha reduces doublegen to the oracle risk") {
  RngStream trng(7, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);

  RngStream seq_rng(13, 0);
  const NextTokenModel gen = random_table(3, 3, seq_rng, 0.5);
  FoldedDataset folded;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> u(3);
    seq_rng.fill_uniform(u);
    const Outcome y = Outcome::tokens(ancestral_sample(gen, u));
    (i < 20 ? folded.fold1 : folded.fold2).push_back({{0.5}, 1, y});
  }
  std::vector<Outcome> cf;
  for (const auto& obs : folded.fold1) cf.push_back(obs.y);
  for (const auto& obs : folded.fold2) cf.push_back(obs.y);

  Dataset treated_pool = folded.fold1;
  const auto nuis = constant_nuisances(1.0, OutcomeSampler::knn(std::move(treated_pool), 3));

  RiskSpec dg;
  dg.mc_u = 8;
  RiskSpec oracle;
  oracle.variant = RiskVariant::oracle;
  const double r_dg = doublegen_risk(loss, folded, nuis, dg, RngStream(3, 3));
  const double r_or = doublegen_risk(loss, folded, nuis, oracle, RngStream(3, 3), cf);
  CHECK(r_dg == doctest::Approx(r_or).epsilon(1e-12));
}

TEST_CASE("sampled gradient terms are unbiased for the full-batch gradient") {
  RngStream trng(8, 0);
  NextTokenModel theta = random_table(3, 3, trng, 0.3);
  const LossFn loss = ce_loss_fn(&theta);

  const Dgp dgp = Dgp::token(default_token_params());
  RngStream data_rng(31, 1);
  const Dataset data = dgp.sample_observational(60, data_rng);
  RngStream fold_rng(31, 2);
  const FoldedDataset folded = partition_folds(data, fold_rng);
  Dataset pool1 = filter_treated(folded.fold1, 1);
  Dataset pool2 = filter_treated(folded.fold2, 1);
  std::array<NuisancePair, 2> nuis =
      constant_nuisances(2.0, OutcomeSampler::knn(std::move(pool1), 2));
  nuis[1].psi = OutcomeSampler::knn(std::move(pool2), 2);

  RiskSpec full_spec;
  full_spec.mc_u = 200;
  RiskProblem full(loss, &folded, &nuis, full_spec);
  std::vector<double> full_grad(loss.param_count, 0.0);
  full.value_and_grad(RngStream(51, 0), full_grad);

  RiskSpec spec;
  spec.mc_u = 1;
  RiskProblem problem(loss, &folded, &nuis, spec);
  std::vector<double> mc_grad(loss.param_count, 0.0);
  RngStream sgd_rng(52, 0);
  const long terms = 100000;
  for (long i = 0; i < terms; ++i) {
    problem.sample_gradient_term(sgd_rng, mc_grad, 1.0 / terms);
  }

  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < full_grad.size(); ++i) {
    num += (mc_grad[i] - full_grad[i]) * (mc_grad[i] - full_grad[i]);
    den += full_grad[i] * full_grad[i];
  }
  CHECK(std::sqrt(num / den) <= 0.02);
}

TEST_CASE("plug-in gradient terms never touch the factual outcome") {
  RngStream trng(9, 0);
  NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);

  FoldedDataset folded = two_point_folded();
  const auto nuis = constant_nuisances(2.0, point_mass_sampler(Outcome::tokens({2, 2, 3})));
  RiskSpec spec;
  spec.variant = RiskVariant::plug_in;
  RiskProblem problem(loss, &folded, &nuis, spec);

  std::vector<double> g1(loss.param_count, 0.0);
  RngStream r1(8, 8);
  problem.sample_gradient_term(r1, g1);

  // Same draws, different factual outcomes: the gradient must not change.
  FoldedDataset altered = folded;
  altered.fold1[0].y = Outcome::tokens({2, 2, 2});
  altered.fold2[0].y = Outcome::tokens({2, 2, 2});
  RiskProblem problem2(loss, &altered, &nuis, spec);
  std::vector<double> g2(loss.param_count, 0.0);
  RngStream r2(8, 8);
  problem2.sample_gradient_term(r2, g2);
  CHECK(g1 == g2);
}

TEST_CASE("gradient term determinism") {
  RngStream trng(10, 0);
  NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);
  const FoldedDataset folded = two_point_folded();
  const auto nuis = constant_nuisances(2.0, point_mass_sampler(Outcome::tokens({2, 2, 3})));
  RiskProblem problem(loss, &folded, &nuis, RiskSpec{});

  std::vector<double> g1(loss.param_count, 0.0), g2(loss.param_count, 0.0);
  RngStream r1(14, 3), r2(14, 3);
  const double v1 = problem.sample_gradient_term(r1, g1);
  const double v2 = problem.sample_gradient_term(r2, g2);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("threaded risk evaluation is bit-identical to serial") {
  RngStream trng(11, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);

  const Dgp dgp = Dgp::token(default_token_params());
  RngStream data_rng(41, 1);
  const Dataset data = dgp.sample_observational(257, data_rng);
  RngStream fold_rng(41, 2);
  const FoldedDataset folded = partition_folds(data, fold_rng);
  const std::array<NuisancePair, 2> nuis = {dgp.oracle_nuisances(), dgp.oracle_nuisances()};

  RiskProblem problem(loss, &folded, &nuis, RiskSpec{});
  const RngStream rng(6, 6);
  const double serial = problem.value(rng, 1);
  CHECK(problem.value(rng, 4) == serial);
  CHECK(problem.value(rng, 3) == serial);
}

TEST_CASE("risk is doubly robust against one bad nuisance") {
  // Fixed hypothesis; the exact counterfactual risk comes from exact
  // summation, so the only randomness is over data replications.
  RngStream trng(12, 0);
  const NextTokenModel theta = random_table(3, 3, trng, 0.7);
  const LossFn loss = ce_loss_fn(&theta);

  const Dgp dgp = Dgp::token(default_token_params());
  const double exact = exact_expected_ce(theta, dgp.counterfactual_pmf());

  const int reps = 80;
  const long n = 600;

  auto replicate = [&](int scenario_id, int rep) {
    RngStream rep_rng(1000 + rep, 17);
    const Dataset data = dgp.sample_observational(n, rep_rng);
    RngStream fold_rng(1000 + rep, 18);
    const FoldedDataset folded = partition_folds(data, fold_rng);

    std::array<NuisancePair, 2> nuis;
    for (int j = 0; j < 2; ++j) {
      const Dataset& fold = j == 0 ? folded.fold1 : folded.fold2;
      if (scenario_id == 0) {
        // Oracle alpha, badly biased outcome sampler.
        nuis[j].alpha = dgp.oracle_nuisances().alpha;
        nuis[j].psi = fit_outcome_sampler_biased(fold, 1, 1, 0, 0.5);
      } else if (scenario_id == 1) {
        // Constant misspecified alpha, oracle outcome sampler.
        PropensityFitConfig pcfg;
        pcfg.ignored_features = {0};
        pcfg.iterations = 300;
        const PropensityModel pm = fit_propensity(fold, 1, pcfg);
        nuis[j].alpha = [pm](std::span<const double> x) { return inverse_propensity(pm, x); };
        nuis[j].psi = dgp.oracle_nuisances().psi;
      } else {
        // Both wrong, rigged to align: alpha pinned at 1 understates every
        // weight while the biased sampler oversamples one arm's law.
        nuis[j].alpha = [](std::span<const double>) { return 1.0; };
        nuis[j].psi = fit_outcome_sampler_biased(fold, 1, 1, 0, 0.5);
      }
    }
    RiskSpec spec;
    spec.mc_u = 4;
    return doublegen_risk(loss, folded, nuis, spec, RngStream(2000 + rep, 19));
  };

  for (int scenario_id = 0; scenario_id < 3; ++scenario_id) {
    double mean = 0.0, m2 = 0.0;
    for (int rep = 0; rep < reps; ++rep) {
      const double v = replicate(scenario_id, rep);
      mean += v;
      m2 += v * v;
    }
    mean /= reps;
    const double sd = std::sqrt((m2 / reps - mean * mean) * reps / (reps - 1.0));
    const double se = sd / std::sqrt(static_cast<double>(reps));
    if (scenario_id < 2) {
      CHECK(std::abs(mean - exact) <= 3.0 * se);
    } else {
      CHECK(std::abs(mean - exact) > 5.0 * se);
    }
  }
}

TEST_CASE("generalization error with a shared stream is exactly zero at the reference") {
  RngStream trng(13, 0);
  const NextTokenModel theta = random_table(3, 3, trng);
  const LossFn loss = ce_loss_fn(&theta);

  const Dgp dgp = Dgp::token(default_token_params());
  auto sampler = [&dgp](RngStream& rng) {
    auto cf_rng = rng.fork(rng.next_u64());
    return dgp.sample_counterfactual(1, cf_rng)[0];
  };
  RngStream rng(3, 14);
  CHECK(generalization_error(loss, loss, sampler, 500, rng) == 0.0);

  LossFn no_reference;
  RngStream rng2(3, 15);
  CHECK_THROWS_WITH_AS(generalization_error(loss, no_reference, sampler, 10, rng2),
                       "generalization_error: no reference hypothesis", std::runtime_error);
}
