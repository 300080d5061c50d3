#include "doublegen/autoreg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "doublegen/data.hpp"
#include "doublegen/mathutil.hpp"
#include "doublegen/risk.hpp"
#include "json.hpp"

namespace doublegen {

namespace {

std::size_t checked_context_count(int k, int d) {
  if (k < 2 || d < 1) throw std::invalid_argument("NextTokenModel: need k >= 2 and d >= 1");
  double total = 1.0;
  for (int i = 0; i < d; ++i) total *= k;
  if (total > 1e6) throw std::invalid_argument("NextTokenModel: k^d exceeds the 10^6 cap");
  std::size_t contexts = 1;
  for (int i = 0; i < d - 1; ++i) contexts *= static_cast<std::size_t>(k);
  return contexts;
}

}  // namespace

NextTokenModel::NextTokenModel(int k, int d) : k_(k), d_(d) {
  contexts_ = checked_context_count(k, d);
  logits_.assign(contexts_ * static_cast<std::size_t>(k), 0.0);
  probs_.assign(contexts_ * static_cast<std::size_t>(k), 1.0 / k);
}

NextTokenModel NextTokenModel::from_logits(int k, int d, std::vector<double> logits) {
  NextTokenModel m(k, d);
  if (logits.size() != m.logits_.size()) {
    throw std::invalid_argument("NextTokenModel: logit table has the wrong size");
  }
  m.logits_ = std::move(logits);
  m.sync_probs();
  return m;
}

NextTokenModel NextTokenModel::from_probs(int k, int d, std::vector<double> probs) {
  NextTokenModel m(k, d);
  if (probs.size() != m.probs_.size()) {
    throw std::invalid_argument("NextTokenModel: probability table has the wrong size");
  }
  for (std::size_t ctx = 0; ctx < m.contexts_; ++ctx) {
    double sum = 0.0;
    for (int t = 0; t < k; ++t) {
      const double p = probs[ctx * k + t];
      if (p < 0.0) throw std::invalid_argument("NextTokenModel: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("NextTokenModel: row does not sum to 1");
    }
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    m.logits_[i] = probs[i] > 0.0 ? std::log(probs[i])
                                  : -std::numeric_limits<double>::infinity();
  }
  m.probs_ = std::move(probs);
  return m;
}

std::size_t NextTokenModel::context_id(std::span<const int> prefix) const {
  const int width = d_ - 1;
  std::size_t id = 0;
  const std::size_t len = std::min<std::size_t>(prefix.size(), static_cast<std::size_t>(width));
  const std::size_t pad = static_cast<std::size_t>(width) - len;
  for (std::size_t i = 0; i < pad; ++i) id = id * k_;  // pad token 1 contributes digit 0
  for (std::size_t i = prefix.size() - len; i < prefix.size(); ++i) {
    const int tok = prefix[i];
    if (tok < 1 || tok > k_) throw std::invalid_argument("context_id: token out of range");
    id = id * k_ + static_cast<std::size_t>(tok - 1);
  }
  return id;
}

std::span<const double> NextTokenModel::probs(std::size_t ctx) const {
  return {probs_.data() + ctx * k_, static_cast<std::size_t>(k_)};
}

std::span<const double> NextTokenModel::logits_row(std::size_t ctx) const {
  return {logits_.data() + ctx * k_, static_cast<std::size_t>(k_)};
}

void NextTokenModel::sync_probs() {
  for (std::size_t ctx = 0; ctx < contexts_; ++ctx) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int t = 0; t < k_; ++t) mx = std::max(mx, logits_[ctx * k_ + t]);
    if (!(mx > -std::numeric_limits<double>::infinity())) {
      throw std::runtime_error("NextTokenModel: row with all-zero mass");
    }
    double sum = 0.0;
    for (int t = 0; t < k_; ++t) {
      const double e = std::exp(logits_[ctx * k_ + t] - mx);
      probs_[ctx * k_ + t] = e;
      sum += e;
    }
    for (int t = 0; t < k_; ++t) probs_[ctx * k_ + t] /= sum;
  }
}

std::string NextTokenModel::to_json() const {
  nlohmann::json j;
  j["k"] = k_;
  j["d"] = d_;
  j["logits"] = logits_;
  return j.dump();
}

NextTokenModel NextTokenModel::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  return from_logits(j.at("k").get<int>(), j.at("d").get<int>(),
                     j.at("logits").get<std::vector<double>>());
}

double ce_loss(const NextTokenModel& model, const TokenSeq& y) {
  if (y.size() != static_cast<std::size_t>(model.d())) {
    throw std::invalid_argument("ce_loss: sequence length mismatch");
  }
  for (int tok : y) {
    if (tok < 1 || tok > model.k()) {
      throw std::invalid_argument("ce_loss: token out of range");
    }
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] == 1) continue;
    const auto ctx = model.context_id(std::span<const int>(y.data(), j));
    const double p = model.probs(ctx)[y[j] - 1];
    if (p <= 0.0) throw std::runtime_error("ce_loss: infinite loss");
    loss -= std::log(p);
  }
  return loss;
}

void ce_loss_grad(const NextTokenModel& model, const TokenSeq& y, std::span<double> grad,
                  double weight) {
  if (grad.size() != model.logits().size()) {
    throw std::invalid_argument("ce_loss_grad: gradient buffer size mismatch");
  }
  const int k = model.k();
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (y[j] == 1) continue;
    const auto ctx = model.context_id(std::span<const int>(y.data(), j));
    const auto row = model.probs(ctx);
    double* g = grad.data() + ctx * k;
    for (int t = 0; t < k; ++t) g[t] += weight * row[t];
    g[y[j] - 1] -= weight;
  }
}

TokenSeq ancestral_sample(const NextTokenModel& model, std::span<const double> u) {
  const int d = model.d(), k = model.k();
  if (u.size() != static_cast<std::size_t>(d)) {
    throw std::invalid_argument("ancestral_sample: need one uniform per position");
  }
  TokenSeq seq(d, 1);
  bool ended = false;
  for (int j = 0; j < d; ++j) {
    if (ended) {
      seq[j] = 1;
      continue;
    }
    const auto ctx = model.context_id(std::span<const int>(seq.data(), j));
    const auto row = model.probs(ctx);
    double cdf = 0.0;
    int tok = k;
    for (int t = 0; t < k; ++t) {
      cdf += row[t];
      if (cdf >= u[j]) {
        tok = t + 1;
        break;
      }
    }
    seq[j] = tok;
    if (tok == k) ended = true;
  }
  return seq;
}

namespace {

void enumerate_pmf(const NextTokenModel& model, TokenSeq& prefix, double prob, TokenPmf& out) {
  const int d = model.d(), k = model.k();
  const int j = static_cast<int>(prefix.size());
  if (j == d) {
    if (prob > 0.0) out[prefix] += prob;
    return;
  }
  const auto row = model.probs(model.context_id(prefix));
  for (int t = 1; t <= k; ++t) {
    const double p = row[t - 1];
    if (p <= 0.0) continue;
    prefix.push_back(t);
    if (t == k) {
      // End of content: remaining positions are forced pads.
      TokenSeq full = prefix;
      full.resize(d, 1);
      out[full] += prob * p;
    } else {
      enumerate_pmf(model, prefix, prob * p, out);
    }
    prefix.pop_back();
  }
}

}  // namespace

TokenPmf exact_pmf(const NextTokenModel& model) {
  checked_context_count(model.k(), model.d());
  TokenPmf out;
  TokenSeq prefix;
  prefix.reserve(model.d());
  enumerate_pmf(model, prefix, 1.0, out);
  return out;
}

NextTokenModel conditional_model_from_pmf(const TokenPmf& pmf, int k, int d) {
  NextTokenModel model(k, d);
  // Accumulate prefix-and-next-token masses over non-pad positions.
  std::vector<double> counts(model.context_count() * static_cast<std::size_t>(k), 0.0);
  for (const auto& [seq, p] : pmf) {
    for (int j = 0; j < d; ++j) {
      if (seq[j] == 1) continue;
      const auto ctx = model.context_id(std::span<const int>(seq.data(), j));
      counts[ctx * k + (seq[j] - 1)] += p;
    }
  }
  std::vector<double> probs(counts.size(), 0.0);
  for (std::size_t ctx = 0; ctx < model.context_count(); ++ctx) {
    double total = 0.0;
    for (int t = 0; t < k; ++t) total += counts[ctx * k + t];
    if (total > 0.0) {
      for (int t = 0; t < k; ++t) probs[ctx * k + t] = counts[ctx * k + t] / total;
      // Guard against accumulated rounding in the row sum.
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += probs[ctx * k + t];
      for (int t = 0; t < k; ++t) probs[ctx * k + t] /= s;
    } else {
      for (int t = 0; t < k; ++t) probs[ctx * k + t] = 1.0 / k;
    }
  }
  return NextTokenModel::from_probs(k, d, std::move(probs));
}

double exact_expected_ce(const NextTokenModel& model, const TokenPmf& pmf) {
  double total = 0.0;
  for (const auto& [seq, p] : pmf) {
    if (p <= 0.0) continue;
    total += p * ce_loss(model, seq);
  }
  return total;
}

double exact_kl_to_model(const TokenPmf& pmf, const NextTokenModel& model) {
  const TokenPmf q = exact_pmf(model);
  double kl = 0.0;
  for (const auto& [seq, p] : pmf) {
    if (p <= 0.0) continue;
    const auto it = q.find(seq);
    if (it == q.end() || it->second <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p * std::log(p / it->second);
  }
  return kl;
}

double tv_between_pmfs(const TokenPmf& a, const TokenPmf& b) {
  double total = 0.0;
  for (const auto& [seq, p] : a) {
    const auto it = b.find(seq);
    total += std::abs(p - (it == b.end() ? 0.0 : it->second));
  }
  for (const auto& [seq, q] : b) {
    if (a.find(seq) == a.end()) total += q;
  }
  return 0.5 * total;
}

TabularFitResult fit_tabular(const RiskProblem& risk, NextTokenModel& model,
                             const TabularFitConfig& config, const RngStream& rng) {
  if (config.iterations < 0) throw std::invalid_argument("fit_tabular: negative iterations");
  TabularFitResult result;
  std::vector<double> grad(model.logits().size());
  for (int it = 0; it < config.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double value =
        risk.value_and_grad(rng.fork(static_cast<std::uint64_t>(it)), grad);
    if (!std::isfinite(value) || !all_finite(grad)) {
      throw std::runtime_error("fit_tabular: diverged");
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
      model.logits()[i] -= config.learning_rate * grad[i];
    }
    model.sync_probs();
    result.risk_log.emplace_back(it + 1, value);
  }
  return result;
}

}  // namespace doublegen
