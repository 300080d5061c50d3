#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "doublegen/data.hpp"

namespace doublegen {

/// Logistic inverse-propensity model with the strong-positivity clip: the
/// evaluated inverse propensity always lies in [1, clip].
struct PropensityModel {
  std::vector<double> coef;  // intercept followed by one slope per feature
  double clip = 100.0;
};

double inverse_propensity(const PropensityModel& model, std::span<const double> x);

struct PropensityFitConfig {
  double learning_rate = 2.0;
  int iterations = 2000;
  double clip = 100.0;
  /// Features whose slopes are pinned at zero (misspecification knob).
  std::vector<int> ignored_features;
};

/// Full-batch gradient descent on the empirical logistic loss of 1(a == a_star).
/// Throws "degenerate fold" when the fold holds a single class.
PropensityModel fit_propensity(const Dataset& fold, int a_star, const PropensityFitConfig& config);

/// Conditional outcome sampler psi-hat: maps one uniform coordinate u in [0,1)
/// and features x to an outcome draw.
class OutcomeSampler {
 public:
  enum class Kind { knn, oracle, misspecified };

  /// Exact conditional transport u -> outcome, typically backed by a Dgp.
  using ConditionalTransport = std::function<Outcome(double u, std::span<const double> x)>;

  OutcomeSampler() = default;

  static OutcomeSampler knn(Dataset treated, int k);
  static OutcomeSampler oracle(ConditionalTransport transport);
  static OutcomeSampler misspecified(OutcomeSampler inner);

  Kind kind() const { return kind_; }
  int neighbor_count() const;

  Outcome sample(double u, std::span<const double> x) const;

  /// The k stored outcomes nearest to x, ordered by (distance, index); only
  /// meaningful for knn-backed samplers (misspecified delegates).
  std::vector<Outcome> atoms(std::span<const double> x) const;

  /// Query bound to a fixed x so repeated draws skip the neighbor search.
  class Prepared {
   public:
    Outcome operator()(double u) const;

   private:
    friend class OutcomeSampler;
    const OutcomeSampler* sampler_ = nullptr;
    std::vector<double> x_;
    std::vector<int> neighbor_ids_;  // knn path
  };

  Prepared prepare(std::span<const double> x) const;

 private:
  std::vector<int> nearest_ids(std::span<const double> x) const;

  Kind kind_ = Kind::knn;
  // knn state
  Dataset treated_;
  int k_ = 0;
  // oracle state
  ConditionalTransport transport_;
  // misspecified wrapper
  std::shared_ptr<const OutcomeSampler> inner_;
};

/// k-nearest-neighbor outcome sampler over the fold's treated observations.
/// Throws "insufficient treated support" when fewer than k are available.
OutcomeSampler fit_outcome_sampler(const Dataset& fold, int a_star, int k);

/// Misspecified variant: fit only on treated observations whose feature
/// `feature` exceeds `threshold`, then wrap.
OutcomeSampler fit_outcome_sampler_biased(const Dataset& fold, int a_star, int k, int feature,
                                          double threshold);

/// Chi-squared divergence between two distributions on shared bins:
/// sum over bins of (p/q - 1)^2 q. Returns +infinity when p puts mass on a
/// q-null bin.
double chi2_divergence(std::span<const double> p, std::span<const double> q);

/// One fold's fitted nuisances: inverse-propensity evaluator and outcome
/// sampler.
struct NuisancePair {
  std::function<double(std::span<const double>)> alpha;
  OutcomeSampler psi;
};

}  // namespace doublegen
