#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "doublegen/rng.hpp"

namespace doublegen {

using TokenSeq = std::vector<int>;
using TokenPmf = std::map<TokenSeq, double>;

/// Next-token table over a 1-based alphabet [k] for sequences of length d.
/// Token k ends the content; token 1 pads every position after it.
///
/// One row per left-padded context in [k]^(d-1), matching how the loss reads
/// contexts. Rows are parameterized by logits (softmax keeps them on the
/// simplex under unconstrained fitting); the cached probability rows are the
/// evaluation representation, so tables built directly from probabilities are
/// exact.
class NextTokenModel {
 public:
  NextTokenModel() = default;
  NextTokenModel(int k, int d);  // uniform rows

  static NextTokenModel from_logits(int k, int d, std::vector<double> logits);
  /// Rows must each sum to 1 within 1e-12.
  static NextTokenModel from_probs(int k, int d, std::vector<double> probs);

  int k() const { return k_; }
  int d() const { return d_; }
  std::size_t context_count() const { return contexts_; }
  std::size_t row_count() const { return contexts_; }

  /// Row index of the left-padded context holding the last (d-1) tokens of
  /// `prefix`, left-padded with 1s.
  std::size_t context_id(std::span<const int> prefix) const;

  std::span<const double> probs(std::size_t ctx) const;
  std::span<const double> logits_row(std::size_t ctx) const;

  std::vector<double>& logits() { return logits_; }
  const std::vector<double>& logits() const { return logits_; }

  /// Recomputes every probability row from the logits.
  void sync_probs();

  std::string to_json() const;
  static NextTokenModel from_json(const std::string& text);

 private:
  int k_ = 0, d_ = 0;
  std::size_t contexts_ = 0;
  std::vector<double> logits_;
  std::vector<double> probs_;
};

/// Cross-entropy with the padding mask: -sum over positions j with y(j) != 1
/// of log theta_{y(j)}(context). The masked sum is applied mechanically to
/// any in-range sequence; keeping pads strictly after the end token is the
/// data contract, not re-checked here. Throws "infinite loss" when a required
/// token has probability zero.
double ce_loss(const NextTokenModel& model, const TokenSeq& y);

/// Accumulates weight * d(ce_loss)/d(logits) into grad (flat, row-major).
void ce_loss_grad(const NextTokenModel& model, const TokenSeq& y, std::span<double> grad,
                  double weight = 1.0);

/// Inverse-transform ancestral sampling: token_j is the smallest m whose
/// cumulative row probability reaches u_j; once token k appears, later
/// positions are forced to 1.
TokenSeq ancestral_sample(const NextTokenModel& model, std::span<const double> u);

/// Exact law of the sampler: enumerates every reachable sequence with its
/// product probability. Requires k^d <= 10^6.
TokenPmf exact_pmf(const NextTokenModel& model);

/// Conditional next-token table implied by a sequence pmf (the cross-entropy
/// risk minimizer for that law). Contexts never reached under the pmf keep
/// uniform rows.
NextTokenModel conditional_model_from_pmf(const TokenPmf& pmf, int k, int d);

/// Exact E_pmf[ce_loss(model, Y)]. Throws "infinite loss" if the model gives
/// zero probability to a pmf-supported token.
double exact_expected_ce(const NextTokenModel& model, const TokenPmf& pmf);

/// KL(pmf || law of model's sampler), by exact summation over pmf's support.
/// Returns +infinity on an absolute-continuity failure.
double exact_kl_to_model(const TokenPmf& pmf, const NextTokenModel& model);

/// Total variation between two pmfs over the union of their supports.
double tv_between_pmfs(const TokenPmf& a, const TokenPmf& b);

class RiskProblem;

struct TabularFitConfig {
  double learning_rate = 2.0;
  int iterations = 400;
};

struct TabularFitResult {
  std::vector<std::pair<long, double>> risk_log;  // (iteration, risk)
};

/// Full-batch gradient descent on the table's logits under the risk bound to
/// it. Noise draws are redrawn each iteration from rng.fork(iteration). Zero
/// iterations returns the initialization untouched.
TabularFitResult fit_tabular(const RiskProblem& risk, NextTokenModel& model,
                             const TabularFitConfig& config, const RngStream& rng);

}  // namespace doublegen
