#include "doublegen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "doublegen/mathutil.hpp"

namespace doublegen {

namespace {

constexpr int kTreatedLabel = 1;
constexpr int kControlLabel = 0;

std::vector<double> token_scenario_rows(double p2_first, double p2_second, double p2_third) {
  // k = 3, d = 3: token 2 is content, 3 ends content, 1 pads. Rows are laid
  // out per context id; only the reachable contexts (1,1), (1,2), (2,2) carry
  // non-uniform mass.
  const int k = 3;
  const std::size_t contexts = 9;
  std::vector<double> probs(contexts * k, 1.0 / k);
  auto set_row = [&](std::size_t ctx, double p2) {
    probs[ctx * k + 0] = 0.0;
    probs[ctx * k + 1] = p2;
    probs[ctx * k + 2] = 1.0 - p2;
  };
  set_row(0, p2_first);   // context (1,1): first position
  set_row(1, p2_second);  // context (1,2): second position after token 2
  set_row(4, p2_third);   // context (2,2): third position after (2,2)
  return probs;
}

}  // namespace

TokenDgpParams default_token_params() {
  TokenDgpParams params;
  params.q = 0.5;
  params.pi1 = 0.8;
  params.pi0 = 0.2;
  params.table_x1 = NextTokenModel::from_probs(3, 3, token_scenario_rows(0.85, 0.8, 0.7));
  params.table_x0 = NextTokenModel::from_probs(3, 3, token_scenario_rows(0.25, 0.3, 0.4));
  params.contaminant = NextTokenModel::from_probs(3, 3, token_scenario_rows(0.55, 0.5, 0.5));
  return params;
}

Dgp Dgp::gauss(GaussDgpParams params) {
  if (params.p < 1) throw std::invalid_argument("Dgp::gauss: p must be positive");
  if (params.a.size() != static_cast<std::size_t>(params.p) ||
      params.c.size() != static_cast<std::size_t>(params.p)) {
    throw std::invalid_argument("Dgp::gauss: coefficient lengths must equal p");
  }
  if (params.s <= 0.0) throw std::invalid_argument("Dgp::gauss: s must be positive");
  Dgp dgp;
  dgp.params_ = std::move(params);
  return dgp;
}

Dgp Dgp::token(TokenDgpParams params) {
  if (!(params.q > 0.0 && params.q < 1.0)) {
    throw std::invalid_argument("Dgp::token: q must lie in (0,1)");
  }
  if (!(params.pi0 > 0.0 && params.pi0 < 1.0 && params.pi1 > 0.0 && params.pi1 < 1.0)) {
    throw std::invalid_argument("Dgp::token: propensities must lie in (0,1)");
  }
  if (params.table_x0.k() != params.table_x1.k() || params.table_x0.d() != params.table_x1.d()) {
    throw std::invalid_argument("Dgp::token: per-x tables must share (k, d)");
  }
  Dgp dgp;
  dgp.params_ = std::move(params);
  return dgp;
}

int Dgp::feature_dim() const { return is_gauss() ? gauss_params().p : 1; }

double Dgp::propensity(std::span<const double> x) const {
  if (is_gauss()) {
    const auto& g = gauss_params();
    return expit(g.a0 + dot(g.a, x));
  }
  const auto& t = token_params();
  return x[0] > 0.5 ? t.pi1 : t.pi0;
}

double Dgp::positivity_floor() const {
  if (is_gauss()) {
    const auto& g = gauss_params();
    double score = g.a0;
    for (double ai : g.a) score += std::min(0.0, ai);
    return expit(score);
  }
  const auto& t = token_params();
  return std::min(t.pi0, t.pi1);
}

Outcome Dgp::draw_treated(std::span<const double> x, RngStream& rng) const {
  if (is_gauss()) {
    const auto& g = gauss_params();
    return Outcome::real({conditional_mean(x) + g.s * rng.normal()});
  }
  const auto& t = token_params();
  const auto& table = x[0] > 0.5 ? t.table_x1 : t.table_x0;
  std::vector<double> u(table.d());
  rng.fill_uniform(u);
  return Outcome::tokens(ancestral_sample(table, u));
}

Outcome Dgp::draw_contaminant(std::span<const double> x, RngStream& rng) const {
  if (is_gauss()) {
    const auto& g = gauss_params();
    return Outcome::real({conditional_mean(x) + g.contaminant_shift + g.s * rng.normal()});
  }
  const auto& t = token_params();
  std::vector<double> u(t.contaminant.d());
  rng.fill_uniform(u);
  return Outcome::tokens(ancestral_sample(t.contaminant, u));
}

Dataset Dgp::sample_observational(long n, RngStream& rng) const {
  if (n < 1) throw std::invalid_argument("sample_observational: n must be positive");
  Dataset out;
  out.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    Observation obs;
    if (is_gauss()) {
      obs.x.resize(gauss_params().p);
      rng.fill_uniform(obs.x);
    } else {
      obs.x = {rng.uniform() < token_params().q ? 1.0 : 0.0};
    }
    const double pi = propensity(obs.x);
    obs.a = rng.uniform() < pi ? kTreatedLabel : kControlLabel;
    obs.y = obs.a == kTreatedLabel ? draw_treated(obs.x, rng) : draw_contaminant(obs.x, rng);
    out.push_back(std::move(obs));
  }
  return out;
}

std::vector<Outcome> Dgp::sample_counterfactual(long n, RngStream& rng) const {
  if (n < 1) throw std::invalid_argument("sample_counterfactual: n must be positive");
  std::vector<Outcome> out;
  out.reserve(static_cast<std::size_t>(n));
  std::vector<double> x(feature_dim());
  for (long i = 0; i < n; ++i) {
    if (is_gauss()) {
      rng.fill_uniform(x);
    } else {
      x[0] = rng.uniform() < token_params().q ? 1.0 : 0.0;
    }
    out.push_back(draw_treated(x, rng));
  }
  return out;
}

double Dgp::conditional_mean(std::span<const double> x) const {
  const auto& g = gauss_params();
  return g.c0 + dot(g.c, x);
}

std::optional<std::pair<double, double>> Dgp::counterfactual_gaussian() const {
  if (!is_gauss()) return std::nullopt;
  const auto& g = gauss_params();
  for (double ci : g.c) {
    if (ci != 0.0) return std::nullopt;
  }
  return std::make_pair(g.c0, g.s);
}

TokenPmf Dgp::counterfactual_pmf() const {
  const auto& t = token_params();
  TokenPmf mix = exact_pmf(t.table_x1);
  for (auto& [seq, p] : mix) p *= t.q;
  for (const auto& [seq, p] : exact_pmf(t.table_x0)) mix[seq] += (1.0 - t.q) * p;
  return mix;
}

TokenPmf Dgp::conditional_token_pmf(std::span<const double> x) const {
  const auto& t = token_params();
  return exact_pmf(x[0] > 0.5 ? t.table_x1 : t.table_x0);
}

std::vector<double> Dgp::conditional_bin_probs(std::span<const double> x,
                                               std::span<const double> edges) const {
  if (!is_gauss()) throw std::logic_error("conditional_bin_probs: Gaussian DGPs only");
  const auto& g = gauss_params();
  const double m = conditional_mean(x);
  std::vector<double> probs(edges.size() + 1);
  double prev = 0.0;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double cdf = normal_cdf((edges[i] - m) / g.s);
    probs[i] = cdf - prev;
    prev = cdf;
  }
  probs[edges.size()] = 1.0 - prev;
  return probs;
}

NuisancePair Dgp::oracle_nuisances(double clip) const {
  NuisancePair pair;
  if (is_gauss()) {
    // Captures by value so the nuisances outlive the dgp handle.
    const auto g = gauss_params();
    pair.alpha = [g, clip](std::span<const double> x) {
      return std::min(clip, 1.0 / expit(g.a0 + dot(g.a, x)));
    };
    pair.psi = OutcomeSampler::oracle([g](double u, std::span<const double> x) {
      const double m = g.c0 + dot(g.c, x);
      return Outcome::real({m + g.s * inv_normal_cdf(u)});
    });
    return pair;
  }

  const auto& t = token_params();
  const double pi0 = t.pi0, pi1 = t.pi1;
  pair.alpha = [pi0, pi1, clip](std::span<const double> x) {
    return std::min(clip, 1.0 / (x[0] > 0.5 ? pi1 : pi0));
  };
  // Single-uniform inverse transform over the exact conditional law; the
  // cumulative tables are frozen here in map (lexicographic) order.
  auto cdf_of = [](const NextTokenModel& table) {
    std::vector<std::pair<TokenSeq, double>> cdf;
    double cum = 0.0;
    for (const auto& [seq, p] : exact_pmf(table)) {
      cum += p;
      cdf.emplace_back(seq, cum);
    }
    return cdf;
  };
  auto cdf0 = cdf_of(t.table_x0);
  auto cdf1 = cdf_of(t.table_x1);
  pair.psi = OutcomeSampler::oracle(
      [cdf0 = std::move(cdf0), cdf1 = std::move(cdf1)](double u, std::span<const double> x) {
        const auto& cdf = x[0] > 0.5 ? cdf1 : cdf0;
        for (const auto& [seq, cum] : cdf) {
          if (cum >= u) return Outcome::tokens(seq);
        }
        return Outcome::tokens(cdf.back().first);
      });
  return pair;
}

namespace {

std::size_t bin_index(double v, std::span<const double> edges) {
  std::size_t i = 0;
  while (i < edges.size() && v >= edges[i]) ++i;
  return i;
}

double chi2_at_x(const OutcomeSampler& sampler, const Dgp& dgp, std::span<const double> x,
                 std::span<const double> edges) {
  const auto atoms = sampler.atoms(x);
  const double mass = 1.0 / static_cast<double>(atoms.size());
  if (dgp.is_gauss()) {
    if (edges.empty()) {
      throw std::invalid_argument("chi2_nuisance_diagnostic: bin edges required for real outcomes");
    }
    const auto truth = dgp.conditional_bin_probs(x, edges);
    std::vector<double> induced(truth.size(), 0.0);
    for (const auto& y : atoms) induced[bin_index(y.reals()[0], edges)] += mass;
    return chi2_divergence(induced, truth);
  }
  const TokenPmf truth = dgp.conditional_token_pmf(x);
  TokenPmf induced;
  for (const auto& y : atoms) induced[y.token_seq()] += mass;
  std::vector<double> p, q;
  for (const auto& [seq, tp] : truth) {
    p.push_back(induced.count(seq) ? induced[seq] : 0.0);
    q.push_back(tp);
  }
  for (const auto& [seq, ip] : induced) {
    if (!truth.count(seq)) {
      p.push_back(ip);
      q.push_back(0.0);
    }
  }
  return chi2_divergence(p, q);
}

}  // namespace

double chi2_nuisance_diagnostic(const OutcomeSampler& sampler, const Dgp& dgp,
                                const std::vector<std::vector<double>>& x_grid,
                                std::span<const double> edges) {
  if (x_grid.empty()) throw std::invalid_argument("chi2_nuisance_diagnostic: empty x grid");
  if (sampler.kind() == OutcomeSampler::Kind::oracle) return 0.0;
  double worst = 0.0;
  for (const auto& x : x_grid) {
    worst = std::max(worst, chi2_at_x(sampler, dgp, x, edges));
  }
  return worst;
}

}  // namespace doublegen
