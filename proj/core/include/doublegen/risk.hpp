#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "doublegen/data.hpp"
#include "doublegen/nuisance.hpp"
#include "doublegen/rng.hpp"

namespace doublegen {

enum class RiskVariant { oracle, naive, plug_in, ipw, doublegen };

struct RiskSpec {
  RiskVariant variant = RiskVariant::doublegen;
  int mc_u = 8;  // noise draws per observation; 128 for reported values
  int a_star = 1;
  /// Ablation switches on the doublegen formula: zero_alpha reproduces the
  /// plug-in risk, zero_psi_terms the IPW risk, bitwise.
  bool zero_alpha = false;
  bool zero_psi_terms = false;
};

/// Per-outcome loss of a fixed hypothesis theta, with its parameter gradient.
/// Monte Carlo losses take the stream by value so a caller can evaluate two
/// outcomes against identical internal draws.
struct LossFn {
  std::size_t param_count = 0;
  std::function<double(const Outcome& y, RngStream rng)> value;
  /// Returns the loss and accumulates weight * dloss/dparams into grad.
  std::function<double(const Outcome& y, RngStream rng, std::span<double> grad, double weight)>
      value_and_grad;
};

/// Cross-fitted AIPW risk of the doublegen objective and its ablations.
///
/// Binds a hypothesis (through `loss`), the folded data, per-fold nuisances
/// (nuisances[j] fitted on fold j+1, applied to the other fold), and the
/// Monte Carlo noise budget. Noise is derived from (rng identity, fold,
/// observation index, draw index) alone, so evaluation is deterministic under
/// any evaluation order and threading, and neighbor lookups are cached per
/// observation.
class RiskProblem {
 public:
  RiskProblem(LossFn loss, const FoldedDataset* folded,
              const std::array<NuisancePair, 2>* nuisances, RiskSpec spec,
              std::span<const Outcome> counterfactual = {});

  const RiskSpec& spec() const { return spec_; }
  std::size_t param_count() const { return loss_.param_count; }

  /// Full risk value. `threads` splits observations into contiguous chunks
  /// whose partial sums are reduced in fixed order, so the result is
  /// bit-stable regardless of thread count.
  double value(const RngStream& rng, int threads = 1) const;

  /// Full-batch gradient; returns the risk value computed from the same
  /// draws.
  double value_and_grad(const RngStream& rng, std::span<double> grad) const;

  /// One unbiased stochastic-gradient term: samples (j, z, u), accumulates
  /// weight * gradient of the single bracketed term into grad, and returns
  /// the term's value.
  double sample_gradient_term(RngStream& rng, std::span<double> grad, double weight = 1.0) const;

 private:
  struct Site {  // one (fold, index) evaluation site
    const Observation* obs;
    int nuisance;  // index into nuisances_ applied to this observation
    std::uint64_t fold_tag;
    std::uint64_t index_tag;
  };

  double term_value(const Site& site, const RngStream& rng) const;
  double term_value_grad(const Site& site, const RngStream& rng, std::span<double> grad,
                         double weight) const;
  const OutcomeSampler::Prepared& prepared_psi(std::size_t site_index) const;

  LossFn loss_;
  const FoldedDataset* folded_ = nullptr;
  const std::array<NuisancePair, 2>* nuisances_ = nullptr;
  RiskSpec spec_;
  std::vector<Outcome> counterfactual_;
  std::vector<Site> sites_;
  std::vector<std::size_t> treated_sites_;  // naive variant's sampling frame
  mutable std::vector<std::optional<OutcomeSampler::Prepared>> prepared_;
};

/// Algorithm-facing wrappers over RiskProblem.
double doublegen_risk(const LossFn& loss, const FoldedDataset& folded,
                      const std::array<NuisancePair, 2>& nuisances, const RiskSpec& spec,
                      const RngStream& rng, std::span<const Outcome> counterfactual = {});

double sample_gradient_term(const LossFn& loss, const FoldedDataset& folded,
                            const std::array<NuisancePair, 2>& nuisances, const RiskSpec& spec,
                            RngStream& rng, std::span<double> grad);

/// Monte Carlo estimate of the generalization error: mean over m draws
/// Y ~ sample_p of loss(theta, Y) - loss(theta_ref, Y), with both losses
/// seeing identical internal draws. Throws "no reference hypothesis" when
/// reference.value is empty.
double generalization_error(const LossFn& theta, const LossFn& reference,
                            const std::function<Outcome(RngStream&)>& sample_p, long m,
                            RngStream& rng);

}  // namespace doublegen
