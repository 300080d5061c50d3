#pragma once

#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "doublegen/autoreg.hpp"
#include "doublegen/data.hpp"
#include "doublegen/nuisance.hpp"
#include "doublegen/rng.hpp"

namespace doublegen {

/// Confounded Gaussian process: X ~ Unif[0,1]^p, treatment probability
/// expit(a0 + a.x), treated outcome N(m(x), s^2) with m(x) = c0 + c.x, and a
/// contaminant arm shifted by contaminant_shift.
struct GaussDgpParams {
  int p = 2;
  double a0 = -1.0;
  std::vector<double> a = {2.5, 0.0};
  double c0 = 1.0;
  std::vector<double> c = {3.0, -1.0};
  double s = 0.5;
  double contaminant_shift = 4.0;
};

/// Confounded token process: X in {0,1} with P(X=1) = q, per-arm propensities,
/// and per-x next-token tables; the contaminant table feeds the untreated arm.
struct TokenDgpParams {
  double q = 0.5;
  double pi1 = 0.8;
  double pi0 = 0.2;
  NextTokenModel table_x0;
  NextTokenModel table_x1;
  NextTokenModel contaminant;
};

/// Default strongly separated k=3, d=3 token scenario.
TokenDgpParams default_token_params();

/// Synthetic data-generating process with analytically known observational
/// and counterfactual laws. The treated label is always 1 and the other arm 0.
class Dgp {
 public:
  static Dgp gauss(GaussDgpParams params);
  static Dgp token(TokenDgpParams params);

  bool is_gauss() const { return std::holds_alternative<GaussDgpParams>(params_); }
  const GaussDgpParams& gauss_params() const { return std::get<GaussDgpParams>(params_); }
  const TokenDgpParams& token_params() const { return std::get<TokenDgpParams>(params_); }

  int a_star() const { return 1; }
  int feature_dim() const;

  double propensity(std::span<const double> x) const;

  /// Smallest propensity over the feature box (exact for the logistic-in-box
  /// Gaussian case and the two-point token case).
  double positivity_floor() const;

  Dataset sample_observational(long n, RngStream& rng) const;
  std::vector<Outcome> sample_counterfactual(long n, RngStream& rng) const;

  /// Exact alpha(x) = 1/propensity(x) (clipped at clip) and the true
  /// conditional transport as the outcome sampler.
  NuisancePair oracle_nuisances(double clip = 100.0) const;

  /// Treated-arm conditional mean m(x) (Gaussian case only).
  double conditional_mean(std::span<const double> x) const;

  /// When the counterfactual law is exactly Gaussian (c == 0), its (mean, sd).
  std::optional<std::pair<double, double>> counterfactual_gaussian() const;

  /// Exact counterfactual pmf (token case only): the q / (1-q) mixture of the
  /// two per-x table laws.
  TokenPmf counterfactual_pmf() const;

  /// Conditional token pmf of the treated arm at x (token case only).
  TokenPmf conditional_token_pmf(std::span<const double> x) const;

  /// Treated-arm conditional bin probabilities at x over the given edges,
  /// with implicit overflow bins at both ends (Gaussian case only; vector has
  /// edges.size() + 1 entries).
  std::vector<double> conditional_bin_probs(std::span<const double> x,
                                            std::span<const double> edges) const;

 private:
  std::variant<GaussDgpParams, TokenDgpParams> params_;

  Outcome draw_treated(std::span<const double> x, RngStream& rng) const;
  Outcome draw_contaminant(std::span<const double> x, RngStream& rng) const;
};

/// Worst-case chi-squared divergence between the sampler-induced conditional
/// law and the DGP's treated-arm conditional law over the x grid. Real
/// outcomes are discretized over `edges` (plus overflow bins); token outcomes
/// compare exact sequence laws. Oracle samplers give 0 by construction.
double chi2_nuisance_diagnostic(const OutcomeSampler& sampler, const Dgp& dgp,
                                const std::vector<std::vector<double>>& x_grid,
                                std::span<const double> edges = {});

}  // namespace doublegen
