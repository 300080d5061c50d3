#include "doublegen/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "doublegen/mathutil.hpp"

namespace doublegen {

NoiseSchedule::NoiseSchedule(double beta, double t_min, double t_max)
    : beta(beta), t_min(t_min), t_max(t_max) {
  if (beta <= 0.0) throw std::invalid_argument("NoiseSchedule: beta must be positive");
  if (!(0.0 < t_min && t_min < t_max)) {
    throw std::invalid_argument("NoiseSchedule: need 0 < t_min < t_max");
  }
  if (mu(t_max) > 0.05) {
    throw std::invalid_argument("NoiseSchedule: mu(t_max) must be <= 0.05");
  }
}

double NoiseSchedule::mu(double t) const { return std::exp(-beta * t); }

double NoiseSchedule::sigma2(double t) const {
  // Written through mu so sigma_t^2 = 1 - mu_t^2 holds to the last bit.
  const double m = mu(t);
  return 1.0 - m * m;
}

double NoiseSchedule::sigma(double t) const { return std::sqrt(sigma2(t)); }

std::pair<double, double> schedule_at(const NoiseSchedule& sched, double t) {
  if (t < 0.0 || t > sched.t_max) {
    throw std::invalid_argument("schedule_at: t outside [0, t_max]");
  }
  return {sched.mu(t), sched.sigma(t)};
}

std::vector<double> forward_noise(const NoiseSchedule& sched, std::span<const double> y0,
                                  double t, RngStream& rng) {
  const auto [mu, sigma] = schedule_at(sched, t);
  std::vector<double> out(y0.size());
  for (std::size_t j = 0; j < y0.size(); ++j) {
    out[j] = mu * y0[j] + sigma * rng.normal();
  }
  return out;
}

double dsm_loss(const ScoreFn& score, const NoiseSchedule& sched, std::span<const double> y0,
                RngStream rng, int mc) {
  if (mc < 1) throw std::invalid_argument("dsm_loss: mc must be positive");
  const std::size_t d = y0.size();
  const double span = sched.t_max - sched.t_min;
  std::vector<double> eps(d), yt(d), out(d);
  double total = 0.0;
  for (int i = 0; i < mc; ++i) {
    const double t = sched.t_min + span * rng.uniform();
    const double mu = sched.mu(t);
    const double sigma = sched.sigma(t);
    rng.fill_normal(eps);
    for (std::size_t j = 0; j < d; ++j) yt[j] = mu * y0[j] + sigma * eps[j];
    score(yt, t, out);
    for (std::size_t j = 0; j < d; ++j) {
      const double resid = -eps[j] / sigma - out[j];  // (mu y0 - y_t)/sigma^2
      total += resid * resid;
    }
  }
  return span * total / mc;
}

double dsm_loss_grad(const ScoreNet& score, const NoiseSchedule& sched,
                     std::span<const double> y0, RngStream rng, int mc,
                     std::span<double> param_grad, double weight) {
  if (mc < 1) throw std::invalid_argument("dsm_loss_grad: mc must be positive");
  const std::size_t d = y0.size();
  const double span = sched.t_max - sched.t_min;
  std::vector<double> eps(d), yt(d), out(d), cot(d);
  double total = 0.0;
  for (int i = 0; i < mc; ++i) {
    const double t = sched.t_min + span * rng.uniform();
    const double mu = sched.mu(t);
    const double sigma = sched.sigma(t);
    rng.fill_normal(eps);
    for (std::size_t j = 0; j < d; ++j) yt[j] = mu * y0[j] + sigma * eps[j];
    score.eval(yt, t, out);
    for (std::size_t j = 0; j < d; ++j) {
      const double resid = -eps[j] / sigma - out[j];
      total += resid * resid;
      cot[j] = -2.0 * resid;
    }
    score.eval_backward(yt, t, cot, param_grad, weight * span / mc);
  }
  return span * total / mc;
}

std::vector<double> diffusion_sample(const ScoreFn& score, const NoiseSchedule& sched, int dim,
                                     RngStream& rng, int steps) {
  if (steps < 1) throw std::invalid_argument("diffusion_sample: steps must be positive");
  if (dim < 1) throw std::invalid_argument("diffusion_sample: dim must be positive");
  std::vector<double> y(dim), drift(dim);
  rng.fill_normal(y);
  const double h = (sched.t_max - sched.t_min) / steps;
  const double noise_scale = std::sqrt(2.0 * sched.beta * h);
  double t = sched.t_max;
  for (int s = 0; s < steps; ++s) {
    score(y, t, drift);
    for (int j = 0; j < dim; ++j) {
      y[j] += sched.beta * (y[j] + 2.0 * drift[j]) * h + noise_scale * rng.normal();
    }
    t -= h;
    if (!all_finite(y)) throw std::runtime_error("diffusion_sample: SDE diverged");
  }
  return y;
}

ScoreFn gaussian_score(double mean, double sd, const NoiseSchedule& sched) {
  const double s2 = sd * sd;
  return [mean, s2, sched](std::span<const double> y, double t, std::span<double> out) {
    const double mu = sched.mu(t);
    const double var = mu * mu * s2 + sched.sigma2(t);
    for (std::size_t j = 0; j < y.size(); ++j) {
      out[j] = -(y[j] - mu * mean) / var;
    }
  };
}

}  // namespace doublegen
