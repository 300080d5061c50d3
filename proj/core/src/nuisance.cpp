#include "doublegen/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "doublegen/mathutil.hpp"

namespace doublegen {

double inverse_propensity(const PropensityModel& model, std::span<const double> x) {
  if (x.size() + 1 != model.coef.size()) {
    throw std::invalid_argument("inverse_propensity: feature dimension mismatch");
  }
  double score = model.coef[0];
  for (std::size_t i = 0; i < x.size(); ++i) score += model.coef[i + 1] * x[i];
  const double p = expit(score);
  const double alpha = 1.0 / p;
  return std::clamp(alpha, 1.0, model.clip);
}

PropensityModel fit_propensity(const Dataset& fold, int a_star,
                               const PropensityFitConfig& config) {
  if (fold.empty()) throw std::invalid_argument("fit_propensity: empty fold");
  if (config.clip < 1.0) throw std::invalid_argument("fit_propensity: clip must be >= 1");

  const std::size_t n = fold.size();
  const std::size_t p = fold.front().x.size();
  std::size_t treated = 0;
  for (const auto& obs : fold) treated += obs.a == a_star ? 1 : 0;
  if (treated == 0 || treated == n) {
    throw std::runtime_error("fit_propensity: degenerate fold");
  }

  std::vector<bool> active(p, true);
  for (int idx : config.ignored_features) {
    if (idx >= 0 && static_cast<std::size_t>(idx) < p) active[idx] = false;
  }

  std::vector<double> coef(p + 1, 0.0);
  std::vector<double> grad(p + 1, 0.0);
  for (int it = 0; it < config.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const auto& obs : fold) {
      double score = coef[0];
      for (std::size_t i = 0; i < p; ++i) {
        if (active[i]) score += coef[i + 1] * obs.x[i];
      }
      const double prob = expit(score);
      const double label = obs.a == a_star ? 1.0 : 0.0;
      loss -= label > 0.5 ? std::log(std::max(prob, 1e-300))
                          : std::log(std::max(1.0 - prob, 1e-300));
      const double resid = prob - label;
      grad[0] += resid;
      for (std::size_t i = 0; i < p; ++i) {
        if (active[i]) grad[i + 1] += resid * obs.x[i];
      }
    }
    if (!std::isfinite(loss)) throw std::runtime_error("fit_propensity: non-finite loss");
    const double scale = config.learning_rate / static_cast<double>(n);
    for (std::size_t i = 0; i < coef.size(); ++i) coef[i] -= scale * grad[i];
  }
  if (!all_finite(coef)) throw std::runtime_error("fit_propensity: non-finite coefficients");

  return PropensityModel{std::move(coef), config.clip};
}

int OutcomeSampler::neighbor_count() const {
  if (kind_ == Kind::misspecified) return inner_->neighbor_count();
  return k_;
}

OutcomeSampler OutcomeSampler::knn(Dataset treated, int k) {
  if (k < 1) throw std::invalid_argument("OutcomeSampler::knn: k must be positive");
  if (treated.size() < static_cast<std::size_t>(k)) {
    throw std::runtime_error("OutcomeSampler::knn: insufficient treated support");
  }
  OutcomeSampler s;
  s.kind_ = Kind::knn;
  s.treated_ = std::move(treated);
  s.k_ = k;
  return s;
}

OutcomeSampler OutcomeSampler::oracle(ConditionalTransport transport) {
  OutcomeSampler s;
  s.kind_ = Kind::oracle;
  s.transport_ = std::move(transport);
  return s;
}

OutcomeSampler OutcomeSampler::misspecified(OutcomeSampler inner) {
  OutcomeSampler s;
  s.kind_ = Kind::misspecified;
  s.inner_ = std::make_shared<OutcomeSampler>(std::move(inner));
  return s;
}

std::vector<int> OutcomeSampler::nearest_ids(std::span<const double> x) const {
  // Ties broken by index ascending: sort key is (squared distance, index).
  std::vector<int> ids(treated_.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<double> dist(treated_.size());
  for (std::size_t i = 0; i < treated_.size(); ++i) {
    dist[i] = squared_distance(treated_[i].x, x);
  }
  auto cmp = [&](int a, int b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + k_, ids.end(), cmp);
  ids.resize(k_);
  return ids;
}

Outcome OutcomeSampler::sample(double u, std::span<const double> x) const {
  return prepare(x)(u);
}

std::vector<Outcome> OutcomeSampler::atoms(std::span<const double> x) const {
  switch (kind_) {
    case Kind::misspecified:
      return inner_->atoms(x);
    case Kind::oracle:
      throw std::logic_error("OutcomeSampler::atoms: oracle samplers have no atom list");
    case Kind::knn:
      break;
  }
  std::vector<Outcome> out;
  out.reserve(k_);
  for (int id : nearest_ids(x)) out.push_back(treated_[id].y);
  return out;
}

OutcomeSampler::Prepared OutcomeSampler::prepare(std::span<const double> x) const {
  if (kind_ == Kind::misspecified) return inner_->prepare(x);
  Prepared p;
  p.sampler_ = this;
  p.x_.assign(x.begin(), x.end());
  if (kind_ == Kind::knn) p.neighbor_ids_ = nearest_ids(x);
  return p;
}

Outcome OutcomeSampler::Prepared::operator()(double u) const {
  if (sampler_->kind_ == Kind::oracle) {
    return sampler_->transport_(u, x_);
  }
  const int k = sampler_->k_;
  int idx = static_cast<int>(u * k);
  idx = std::clamp(idx, 0, k - 1);
  return sampler_->treated_[neighbor_ids_[idx]].y;
}

OutcomeSampler fit_outcome_sampler(const Dataset& fold, int a_star, int k) {
  return OutcomeSampler::knn(filter_treated(fold, a_star), k);
}

OutcomeSampler fit_outcome_sampler_biased(const Dataset& fold, int a_star, int k, int feature,
                                          double threshold) {
  Dataset subset;
  for (const auto& obs : fold) {
    if (obs.a != a_star) continue;
    if (feature < 0 || static_cast<std::size_t>(feature) >= obs.x.size()) {
      throw std::invalid_argument("fit_outcome_sampler_biased: bad feature index");
    }
    if (obs.x[feature] > threshold) subset.push_back(obs);
  }
  return OutcomeSampler::misspecified(OutcomeSampler::knn(std::move(subset), k));
}

double chi2_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("chi2_divergence: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] <= 0.0) {
      if (p[i] > 0.0) return std::numeric_limits<double>::infinity();
      continue;
    }
    const double ratio = p[i] / q[i] - 1.0;
    total += ratio * ratio * q[i];
  }
  return total;
}

}  // namespace doublegen
