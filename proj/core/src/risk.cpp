#include "doublegen/risk.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace doublegen {

namespace {

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw std::runtime_error(std::string("risk: non-finite loss in ") + what);
  }
}

}  // namespace

RiskProblem::RiskProblem(LossFn loss, const FoldedDataset* folded,
                         const std::array<NuisancePair, 2>* nuisances, RiskSpec spec,
                         std::span<const Outcome> counterfactual)
    : loss_(std::move(loss)),
      folded_(folded),
      nuisances_(nuisances),
      spec_(spec),
      counterfactual_(counterfactual.begin(), counterfactual.end()) {
  if (spec_.mc_u < 1) throw std::invalid_argument("RiskProblem: mc_u must be >= 1");
  if (spec_.variant == RiskVariant::oracle) {
    if (counterfactual_.empty()) {
      throw std::invalid_argument("RiskProblem: oracle variant needs a counterfactual sample");
    }
    sites_.reserve(counterfactual_.size());
    for (std::size_t i = 0; i < counterfactual_.size(); ++i) {
      sites_.push_back(Site{nullptr, -1, 0, i});
    }
  } else {
    if (!folded_ || folded_->size() == 0) {
      throw std::invalid_argument("RiskProblem: empty dataset");
    }
    if (!nuisances_ && (spec_.variant != RiskVariant::naive)) {
      throw std::invalid_argument("RiskProblem: nuisances required");
    }
    sites_.reserve(folded_->size());
    // Nuisances fitted on fold j are applied to the other fold's observations.
    for (std::size_t i = 0; i < folded_->fold1.size(); ++i) {
      sites_.push_back(Site{&folded_->fold1[i], 1, 1, i});
    }
    for (std::size_t i = 0; i < folded_->fold2.size(); ++i) {
      sites_.push_back(Site{&folded_->fold2[i], 0, 2, i});
    }
  }
  prepared_.assign(sites_.size(), std::nullopt);
  if (spec_.variant == RiskVariant::naive) {
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      if (sites_[i].obs->a == spec_.a_star) treated_sites_.push_back(i);
    }
  }
}

const OutcomeSampler::Prepared& RiskProblem::prepared_psi(std::size_t site_index) const {
  auto& slot = prepared_[site_index];
  if (!slot) {
    const Site& site = sites_[site_index];
    slot = (*nuisances_)[site.nuisance].psi.prepare(site.obs->x);
  }
  return *slot;
}

double RiskProblem::term_value(const Site& site, const RngStream& rng) const {
  const RngStream site_rng = rng.fork(site.fold_tag, site.index_tag);

  if (spec_.variant == RiskVariant::oracle) {
    const double v = loss_.value(counterfactual_[site.index_tag], site_rng.fork(1));
    check_finite(v, "oracle term");
    return v;
  }
  if (spec_.variant == RiskVariant::naive) {
    const double v = loss_.value(site.obs->y, site_rng.fork(1));
    check_finite(v, "naive term");
    return v;
  }

  const bool use_alpha = spec_.variant != RiskVariant::plug_in && !spec_.zero_alpha;
  const bool use_psi = spec_.variant != RiskVariant::ipw && !spec_.zero_psi_terms;
  const bool treated = site.obs->a == spec_.a_star;
  const NuisancePair& nuis = (*nuisances_)[site.nuisance];

  double a_coef = 0.0;
  if (use_alpha && treated) a_coef = nuis.alpha(site.obs->x);

  const std::size_t site_index = static_cast<std::size_t>(&site - sites_.data());
  RngStream u_rng = site_rng.fork(0);
  double total = 0.0;
  for (int m = 0; m < spec_.mc_u; ++m) {
    const double u = u_rng.uniform();
    const RngStream loss_rng = site_rng.fork(1 + static_cast<std::uint64_t>(m));
    double psi_part = 0.0;
    if (use_psi) {
      psi_part = loss_.value(prepared_psi(site_index)(u), loss_rng);
    }
    double term = psi_part;
    if (a_coef != 0.0) {
      const double ly = loss_.value(site.obs->y, loss_rng);
      term += a_coef * (ly - psi_part);
    }
    total += term;
  }
  const double value = total / spec_.mc_u;
  check_finite(value, "aipw term");
  return value;
}

double RiskProblem::term_value_grad(const Site& site, const RngStream& rng,
                                    std::span<double> grad, double weight) const {
  const RngStream site_rng = rng.fork(site.fold_tag, site.index_tag);

  if (spec_.variant == RiskVariant::oracle) {
    const double v =
        loss_.value_and_grad(counterfactual_[site.index_tag], site_rng.fork(1), grad, weight);
    check_finite(v, "oracle term");
    return v;
  }
  if (spec_.variant == RiskVariant::naive) {
    const double v = loss_.value_and_grad(site.obs->y, site_rng.fork(1), grad, weight);
    check_finite(v, "naive term");
    return v;
  }

  const bool use_alpha = spec_.variant != RiskVariant::plug_in && !spec_.zero_alpha;
  const bool use_psi = spec_.variant != RiskVariant::ipw && !spec_.zero_psi_terms;
  const bool treated = site.obs->a == spec_.a_star;
  const NuisancePair& nuis = (*nuisances_)[site.nuisance];

  double a_coef = 0.0;
  if (use_alpha && treated) a_coef = nuis.alpha(site.obs->x);

  const std::size_t site_index = static_cast<std::size_t>(&site - sites_.data());
  RngStream u_rng = site_rng.fork(0);
  const double per_draw = weight / spec_.mc_u;
  double total = 0.0;
  for (int m = 0; m < spec_.mc_u; ++m) {
    const double u = u_rng.uniform();
    const RngStream loss_rng = site_rng.fork(1 + static_cast<std::uint64_t>(m));
    double psi_part = 0.0;
    if (use_psi) {
      psi_part = loss_.value_and_grad(prepared_psi(site_index)(u), loss_rng, grad,
                                      per_draw * (1.0 - a_coef));
    }
    double term = psi_part;
    if (a_coef != 0.0) {
      const double ly = loss_.value_and_grad(site.obs->y, loss_rng, grad, per_draw * a_coef);
      term += a_coef * (ly - psi_part);
    }
    total += term;
  }
  const double value = total / spec_.mc_u;
  check_finite(value, "aipw term");
  return value;
}

double RiskProblem::value(const RngStream& rng, int threads) const {
  const std::size_t n = sites_.size();
  const bool naive = spec_.variant == RiskVariant::naive;

  // Fixed-size blocks with a serial in-order final reduction: the bracketing
  // of the floating-point sum never depends on the thread count.
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  std::vector<double> block_sums(blocks, 0.0);
  std::vector<std::size_t> block_counts(blocks, 0);

  auto evaluate_block = [&](std::size_t b) {
    const std::size_t begin = b * kBlock;
    const std::size_t end = std::min(n, begin + kBlock);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (naive) {
        if (sites_[i].obs->a != spec_.a_star) continue;
        ++count;
      }
      sum += term_value(sites_[i], rng);
    }
    block_sums[b] = sum;
    block_counts[b] = count;
  };

  if (threads <= 1 || blocks < 2) {
    for (std::size_t b = 0; b < blocks; ++b) evaluate_block(b);
  } else {
    // Prepare neighbor caches serially; worker threads then only read.
    if (spec_.variant != RiskVariant::oracle && spec_.variant != RiskVariant::naive) {
      for (std::size_t i = 0; i < n; ++i) prepared_psi(i);
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const std::size_t workers = std::min<std::size_t>(threads, blocks);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t b = next.fetch_add(1);
          if (b >= blocks) return;
          evaluate_block(b);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  double total = 0.0;
  std::size_t treated_count = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    total += block_sums[b];
    treated_count += block_counts[b];
  }

  if (naive) {
    if (treated_count == 0) {
      throw std::runtime_error("risk: naive variant with zero treated observations");
    }
    return total / static_cast<double>(treated_count);
  }
  return total / static_cast<double>(n);
}

double RiskProblem::value_and_grad(const RngStream& rng, std::span<double> grad) const {
  if (grad.size() != loss_.param_count) {
    throw std::invalid_argument("RiskProblem: gradient buffer size mismatch");
  }
  const std::size_t n = sites_.size();
  const bool naive = spec_.variant == RiskVariant::naive;

  if (naive) {
    std::size_t treated = 0;
    for (const auto& site : sites_) treated += site.obs->a == spec_.a_star ? 1 : 0;
    if (treated == 0) throw std::runtime_error("risk: naive variant with zero treated observations");
    const double w = 1.0 / static_cast<double>(treated);
    double total = 0.0;
    for (const auto& site : sites_) {
      if (site.obs->a != spec_.a_star) continue;
      total += term_value_grad(site, rng, grad, w);
    }
    return total * w;
  }

  const double w = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (const auto& site : sites_) total += term_value_grad(site, rng, grad, w);
  return total * w;
}

double RiskProblem::sample_gradient_term(RngStream& rng, std::span<double> grad,
                                         double weight) const {
  if (grad.size() != loss_.param_count) {
    throw std::invalid_argument("RiskProblem: gradient buffer size mismatch");
  }

  if (spec_.variant == RiskVariant::oracle) {
    const std::size_t i = rng.uniform_index(counterfactual_.size());
    const RngStream loss_rng = rng.fork(rng.next_u64());
    const double v = loss_.value_and_grad(counterfactual_[i], loss_rng, grad, weight);
    check_finite(v, "oracle term");
    return v;
  }

  if (spec_.variant == RiskVariant::naive) {
    if (treated_sites_.empty()) {
      throw std::runtime_error("risk: naive variant with zero treated observations");
    }
    const std::size_t i = treated_sites_[rng.uniform_index(treated_sites_.size())];
    const RngStream loss_rng = rng.fork(rng.next_u64());
    const double v = loss_.value_and_grad(sites_[i].obs->y, loss_rng, grad, weight);
    check_finite(v, "naive term");
    return v;
  }

  // Uniform over all observations = fold chosen with probability
  // proportional to its size, then an observation uniform within it.
  const std::size_t i = rng.uniform_index(sites_.size());
  const Site& site = sites_[i];
  const double u = rng.uniform();
  const RngStream loss_rng = rng.fork(rng.next_u64());

  const bool use_alpha = spec_.variant != RiskVariant::plug_in && !spec_.zero_alpha;
  const bool use_psi = spec_.variant != RiskVariant::ipw && !spec_.zero_psi_terms;
  const bool treated = site.obs->a == spec_.a_star;
  const NuisancePair& nuis = (*nuisances_)[site.nuisance];

  double a_coef = 0.0;
  if (use_alpha && treated) a_coef = nuis.alpha(site.obs->x);

  double psi_part = 0.0;
  if (use_psi) {
    psi_part = loss_.value_and_grad(prepared_psi(i)(u), loss_rng, grad, weight * (1.0 - a_coef));
  }
  double term = psi_part;
  if (a_coef != 0.0) {
    const double ly = loss_.value_and_grad(site.obs->y, loss_rng, grad, weight * a_coef);
    term += a_coef * (ly - psi_part);
  }
  check_finite(term, "aipw term");
  return term;
}

double doublegen_risk(const LossFn& loss, const FoldedDataset& folded,
                      const std::array<NuisancePair, 2>& nuisances, const RiskSpec& spec,
                      const RngStream& rng, std::span<const Outcome> counterfactual) {
  return RiskProblem(loss, &folded, &nuisances, spec, counterfactual).value(rng);
}

double sample_gradient_term(const LossFn& loss, const FoldedDataset& folded,
                            const std::array<NuisancePair, 2>& nuisances, const RiskSpec& spec,
                            RngStream& rng, std::span<double> grad) {
  return RiskProblem(loss, &folded, &nuisances, spec).sample_gradient_term(rng, grad);
}

double generalization_error(const LossFn& theta, const LossFn& reference,
                            const std::function<Outcome(RngStream&)>& sample_p, long m,
                            RngStream& rng) {
  if (!reference.value) throw std::runtime_error("generalization_error: no reference hypothesis");
  if (m < 1) throw std::invalid_argument("generalization_error: m must be positive");
  double total = 0.0;
  for (long i = 0; i < m; ++i) {
    const Outcome y = sample_p(rng);
    const RngStream loss_rng = rng.fork(rng.next_u64());
    total += theta.value(y, loss_rng) - reference.value(y, loss_rng);
  }
  return total / static_cast<double>(m);
}

}  // namespace doublegen
