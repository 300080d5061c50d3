#pragma once

#include <functional>
#include <span>
#include <vector>

#include "doublegen/mlp.hpp"
#include "doublegen/rng.hpp"

namespace doublegen {

/// Time-dependent vector field y' = f(y, t) evaluated into `out`.
using FieldFn = std::function<void(std::span<const double> y, double t, std::span<double> out)>;

/// Learnable vector field for the velocity-matching backend.
using VectorField = TimeConditionedNet;

FieldFn field_of(const VectorField& field);

/// Velocity-matching loss: Monte Carlo average over mc pairs (t ~ Unif[0,1),
/// U ~ N(0,I_d)) of || y - U - f((1-t)U + t y, t) ||^2.
double flow_loss(const FieldFn& field, std::span<const double> y, RngStream rng, int mc);

/// Loss value plus weight * gradient w.r.t. the field's parameters, using the
/// same draws as flow_loss for the same rng.
double flow_loss_grad(const VectorField& field, std::span<const double> y, RngStream rng, int mc,
                      std::span<double> param_grad, double weight = 1.0);

/// Transports u through dy/dt = f(y,t) from t=0 to t=1 with classical
/// fourth-order Runge-Kutta on a uniform grid. Throws "ODE diverged" on a
/// non-finite state.
std::vector<double> flow_sample(const FieldFn& field, std::span<const double> u, int steps);

/// Closed-form interpolation field transporting N(0,1) to N(mean, sd^2),
/// applied per coordinate: the conditional expectation
/// E[Y - U | (1-t)U + tY = z] of the independent Gaussian pair.
FieldFn gaussian_interpolation_field(double mean, double sd);

/// Exact transport of the Gaussian interpolation field: u -> mean + sd * u at
/// t = 1 (reference for step-refinement checks).
std::vector<double> gaussian_interpolation_exact(double mean, double sd,
                                                 std::span<const double> u);

}  // namespace doublegen
