#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <map>

#include "doctest.h"
#include "doublegen/mathutil.hpp"
#include "doublegen/nuisance.hpp"

using namespace doublegen;

namespace {

Dataset four_point_balanced_fold() {
  // Both labels observed at both feature points: the logistic optimum has
  // zero slopes and intercept, so the inverse propensity is 2 everywhere.
  Dataset fold;
  fold.push_back({{0.2}, 1, Outcome::real({0.0})});
  fold.push_back({{0.2}, 0, Outcome::real({0.0})});
  fold.push_back({{0.8}, 1, Outcome::real({0.0})});
  fold.push_back({{0.8}, 0, Outcome::real({0.0})});
  return fold;
}

double logistic_loss(const Dataset& fold, int a_star, double b0, double b1) {
  double loss = 0.0;
  for (const auto& obs : fold) {
    const double p = expit(b0 + b1 * obs.x[0]);
    loss -= obs.a == a_star ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

}  // namespace

TEST_CASE("balanced symmetric fold fits to the constant-half model") {
  const auto fold = four_point_balanced_fold();

  // Enumeration oracle: coarse grid search confirms (0, 0) minimizes the
  // empirical logistic loss on this fold.
  const double base = logistic_loss(fold, 1, 0.0, 0.0);
  for (double b0 = -2.0; b0 <= 2.0; b0 += 0.25) {
    for (double b1 = -2.0; b1 <= 2.0; b1 += 0.25) {
      CHECK(base <= logistic_loss(fold, 1, b0, b1) + 1e-12);
    }
  }

  PropensityFitConfig cfg;
  cfg.iterations = 4000;
  const PropensityModel model = fit_propensity(fold, 1, cfg);
  CHECK(std::abs(model.coef[0]) < 1e-6);
  CHECK(std::abs(model.coef[1]) < 1e-6);
  CHECK(inverse_propensity(model, std::vector<double>{0.5}) == doctest::Approx(2.0));
}

TEST_CASE("single-class folds are rejected") {
  Dataset fold;
  fold.push_back({{0.1}, 1, Outcome::real({0.0})});
  fold.push_back({{0.9}, 1, Outcome::real({0.0})});
  CHECK_THROWS_WITH_AS(fit_propensity(fold, 1, PropensityFitConfig{}),
                       "fit_propensity: degenerate fold", std::runtime_error);
}

TEST_CASE("inverse propensity evaluation follows clip(1/expit, 1, C7)") {
  PropensityModel model;
  model.coef = {0.0, 0.0};
  model.clip = 100.0;
  CHECK(inverse_propensity(model, std::vector<double>{0.3}) == 2.0);

  model.coef = {50.0, 0.0};  // p ~ 1, reciprocal < 1, lower clip binds
  CHECK(inverse_propensity(model, std::vector<double>{0.0}) == 1.0);

  model.coef = {-6.9, 0.0};  // p ~ 0.001
  model.clip = 50.0;
  CHECK(inverse_propensity(model, std::vector<double>{0.0}) == 50.0);
}

TEST_CASE("clipping invariant holds for random models and points") {
  RngStream rng(31, 0);
  for (int trial = 0; trial < 200; ++trial) {
    PropensityModel model;
    model.coef = {4.0 * rng.normal(), 4.0 * rng.normal(), 4.0 * rng.normal()};
    model.clip = 1.0 + 20.0 * rng.uniform();
    const std::vector<double> x = {rng.normal(), rng.normal()};
    const double alpha = inverse_propensity(model, x);
    CHECK(alpha >= 1.0);
    CHECK(alpha <= model.clip);
  }
}

TEST_CASE("ignored features keep zero slopes") {
  RngStream rng(32, 0);
  Dataset fold;
  for (int i = 0; i < 200; ++i) {
    const double x0 = rng.uniform();
    const double x1 = rng.uniform();
    const int a = rng.uniform() < expit(2.0 * x0 - 1.0 + x1) ? 1 : 0;
    fold.push_back({{x0, x1}, a, Outcome::real({0.0})});
  }
  PropensityFitConfig cfg;
  cfg.ignored_features = {0};
  cfg.iterations = 500;
  const PropensityModel model = fit_propensity(fold, 1, cfg);
  CHECK(model.coef[1] == 0.0);
  CHECK(model.coef[2] != 0.0);
}

TEST_CASE("knn sampler with k=1 returns the nearest outcome for every u") {
  Dataset fold;
  fold.push_back({{0.0}, 1, Outcome::real({10.0})});
  fold.push_back({{1.0}, 1, Outcome::real({20.0})});
  fold.push_back({{5.0}, 0, Outcome::real({-1.0})});  // untreated, ignored
  const OutcomeSampler sampler = fit_outcome_sampler(fold, 1, 1);
  for (double u : {0.0, 0.3, 0.999}) {
    CHECK(sampler.sample(u, std::vector<double>{0.2}).reals()[0] == 10.0);
    CHECK(sampler.sample(u, std::vector<double>{0.9}).reals()[0] == 20.0);
  }
}

TEST_CASE("knn sampler with k equal to the treated count is a uniform draw") {
  Dataset fold;
  for (int i = 0; i < 4; ++i) {
    fold.push_back({{static_cast<double>(i)}, 1, Outcome::real({static_cast<double>(i)})});
  }
  const OutcomeSampler sampler = fit_outcome_sampler(fold, 1, 4);
  std::map<double, int> counts;
  const int grid = 400;  // k * 100
  for (int g = 0; g < grid; ++g) {
    const double u = (g + 0.5) / grid;
    counts[sampler.sample(u, std::vector<double>{1.7}).reals()[0]] += 1;
  }
  REQUIRE(counts.size() == 4);
  for (const auto& [_, c] : counts) CHECK(c == 100);
}

TEST_CASE("distance ties break by dataset index ascending") {
  Dataset fold;
  fold.push_back({{1.0}, 1, Outcome::real({111.0})});
  fold.push_back({{1.0}, 1, Outcome::real({222.0})});
  fold.push_back({{1.0}, 1, Outcome::real({333.0})});
  const OutcomeSampler sampler = fit_outcome_sampler(fold, 1, 2);
  const auto atoms = sampler.atoms(std::vector<double>{1.0});
  REQUIRE(atoms.size() == 2);
  CHECK(atoms[0].reals()[0] == 111.0);
  CHECK(atoms[1].reals()[0] == 222.0);
}

TEST_CASE("floor indexing over ordered neighbors") {
  Dataset fold;
  fold.push_back({{0.0}, 1, Outcome::real({3.0})});
  fold.push_back({{0.5}, 1, Outcome::real({7.0})});
  const OutcomeSampler sampler = fit_outcome_sampler(fold, 1, 2);
  CHECK(sampler.sample(0.49, std::vector<double>{0.0}).reals()[0] == 3.0);
  CHECK(sampler.sample(0.51, std::vector<double>{0.0}).reals()[0] == 7.0);
}

TEST_CASE("insufficient treated support is an error") {
  Dataset fold;
  fold.push_back({{0.0}, 1, Outcome::real({1.0})});
  fold.push_back({{0.0}, 0, Outcome::real({2.0})});
  CHECK_THROWS_WITH_AS(fit_outcome_sampler(fold, 1, 2),
                       "OutcomeSampler::knn: insufficient treated support", std::runtime_error);
  CHECK_THROWS_AS(fit_outcome_sampler_biased(fold, 1, 1, 0, 0.5), std::runtime_error);
}

TEST_CASE("pushforward law of the knn sampler is uniform over neighbors") {
  RngStream rng(41, 0);
  Dataset fold;
  for (int i = 0; i < 50; ++i) {
    fold.push_back({{rng.uniform(), rng.uniform()}, 1, Outcome::real({rng.normal()})});
  }
  const int k = 10;
  const OutcomeSampler sampler = fit_outcome_sampler(fold, 1, k);
  const std::vector<double> x = {0.4, 0.6};
  const auto atoms = sampler.atoms(x);

  // Exact enumeration over a u grid of k*100 points.
  std::map<double, int> counts;
  for (int g = 0; g < k * 100; ++g) {
    const double u = (g + 0.5) / (k * 100);
    counts[sampler.sample(u, x).reals()[0]] += 1;
  }
  REQUIRE(counts.size() == static_cast<std::size_t>(k));
  for (const auto& [_, c] : counts) CHECK(c == 100);

  // Monte Carlo law over 1e5 random draws: TV to the uniform pmf <= 0.01.
  std::map<double, int> mc_counts;
  const int draws = 100000;
  auto prepared = sampler.prepare(x);
  for (int i = 0; i < draws; ++i) mc_counts[prepared(rng.uniform()).reals()[0]] += 1;
  double tv = 0.0;
  for (const auto& atom : atoms) {
    tv += std::abs(static_cast<double>(mc_counts[atom.reals()[0]]) / draws - 1.0 / k);
  }
  CHECK(tv / 2.0 <= 0.01);
}

TEST_CASE("misspecified sampler delegates to its biased inner fit") {
  Dataset fold;
  fold.push_back({{0.2}, 1, Outcome::real({1.0})});
  fold.push_back({{0.9}, 1, Outcome::real({2.0})});
  const OutcomeSampler sampler = fit_outcome_sampler_biased(fold, 1, 1, 0, 0.5);
  CHECK(sampler.kind() == OutcomeSampler::Kind::misspecified);
  // Only the x=0.9 observation survives the threshold, so every query maps
  // to outcome 2.
  CHECK(sampler.sample(0.1, std::vector<double>{0.0}).reals()[0] == 2.0);
}

TEST_CASE("chi-squared divergence on shared bins") {
  CHECK(chi2_divergence(std::vector<double>{0.25, 0.75}, std::vector<double>{0.25, 0.75}) == 0.0);
  CHECK(chi2_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75}) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(std::isinf(chi2_divergence(std::vector<double>{0.5, 0.5},
                                   std::vector<double>{1.0, 0.0})));
}
