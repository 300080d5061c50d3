#pragma once

#include <span>
#include <utility>
#include <vector>

#include "doublegen/flow.hpp"
#include "doublegen/mlp.hpp"
#include "doublegen/rng.hpp"

namespace doublegen {

/// Variance-preserving noise schedule with constant rate beta, so the
/// closed forms mu_t = exp(-beta t) and sigma_t^2 = 1 - exp(-2 beta t) hold
/// exactly. The truncation times satisfy 0 < t_min < t_max and
/// mu(t_max) <= 0.05, keeping the terminal marginal close to N(0, I).
struct NoiseSchedule {
  double beta = 1.0;
  double t_min = 1e-3;
  double t_max = 3.0;

  NoiseSchedule() = default;
  NoiseSchedule(double beta, double t_min, double t_max);

  double mu(double t) const;
  double sigma2(double t) const;
  double sigma(double t) const;
};

/// (mu_t, sigma_t); t must lie in [0, t_max].
std::pair<double, double> schedule_at(const NoiseSchedule& sched, double t);

/// One draw of the forward noising: y_t = mu_t y0 + sigma_t eps.
std::vector<double> forward_noise(const NoiseSchedule& sched, std::span<const double> y0,
                                  double t, RngStream& rng);

/// Learnable score network (same hypothesis shape as the flow field).
using ScoreNet = TimeConditionedNet;
using ScoreFn = FieldFn;

/// Denoising score matching loss: (t_max - t_min) times the Monte Carlo
/// average over mc draws of t ~ Unif[t_min, t_max], eps ~ N(0, I_d) of
/// || (mu_t y0 - y_t)/sigma_t^2 - theta(y_t, t) ||^2 with
/// y_t = mu_t y0 + sigma_t eps.
double dsm_loss(const ScoreFn& score, const NoiseSchedule& sched, std::span<const double> y0,
                RngStream rng, int mc);

double dsm_loss_grad(const ScoreNet& score, const NoiseSchedule& sched,
                     std::span<const double> y0, RngStream rng, int mc,
                     std::span<double> param_grad, double weight = 1.0);

/// Reverse-time Euler-Maruyama sampler: starts at Y ~ N(0, I_dim) at t_max and
/// steps down to t_min with uniform step h, applying
/// Y <- Y + beta [Y + 2 theta(Y,t)] h + sqrt(2 beta h) xi. Throws
/// "SDE diverged" on a non-finite state.
std::vector<double> diffusion_sample(const ScoreFn& score, const NoiseSchedule& sched, int dim,
                                     RngStream& rng, int steps);

/// Analytic score of the forward marginal when the data law is N(mean, sd^2)
/// per coordinate: theta(y, t) = -(y - mu_t mean) / (mu_t^2 sd^2 + sigma_t^2).
ScoreFn gaussian_score(double mean, double sd, const NoiseSchedule& sched);

}  // namespace doublegen
