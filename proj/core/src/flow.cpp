#include "doublegen/flow.hpp"

#include <cmath>
#include <stdexcept>

#include "doublegen/mathutil.hpp"

namespace doublegen {

FieldFn field_of(const VectorField& field) {
  return [&field](std::span<const double> y, double t, std::span<double> out) {
    field.eval(y, t, out);
  };
}

double flow_loss(const FieldFn& field, std::span<const double> y, RngStream rng, int mc) {
  if (mc < 1) throw std::invalid_argument("flow_loss: mc must be positive");
  const std::size_t d = y.size();
  std::vector<double> noise(d), z(d), out(d);
  double total = 0.0;
  for (int i = 0; i < mc; ++i) {
    const double t = rng.uniform();
    rng.fill_normal(noise);
    for (std::size_t j = 0; j < d; ++j) z[j] = (1.0 - t) * noise[j] + t * y[j];
    field(z, t, out);
    for (std::size_t j = 0; j < d; ++j) {
      const double resid = y[j] - noise[j] - out[j];
      total += resid * resid;
    }
  }
  return total / mc;
}

double flow_loss_grad(const VectorField& field, std::span<const double> y, RngStream rng, int mc,
                      std::span<double> param_grad, double weight) {
  if (mc < 1) throw std::invalid_argument("flow_loss_grad: mc must be positive");
  const std::size_t d = y.size();
  std::vector<double> noise(d), z(d), out(d), cot(d);
  double total = 0.0;
  for (int i = 0; i < mc; ++i) {
    const double t = rng.uniform();
    rng.fill_normal(noise);
    for (std::size_t j = 0; j < d; ++j) z[j] = (1.0 - t) * noise[j] + t * y[j];
    field.eval(z, t, out);
    for (std::size_t j = 0; j < d; ++j) {
      const double resid = y[j] - noise[j] - out[j];
      total += resid * resid;
      cot[j] = -2.0 * resid;
    }
    field.eval_backward(z, t, cot, param_grad, weight / mc);
  }
  return total / mc;
}

std::vector<double> flow_sample(const FieldFn& field, std::span<const double> u, int steps) {
  if (steps < 1) throw std::invalid_argument("flow_sample: steps must be positive");
  const std::size_t d = u.size();
  std::vector<double> y(u.begin(), u.end());
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
  const double h = 1.0 / steps;
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) * h;
    field(y, t, k1);
    for (std::size_t j = 0; j < d; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
    field(tmp, t + 0.5 * h, k2);
    for (std::size_t j = 0; j < d; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
    field(tmp, t + 0.5 * h, k3);
    for (std::size_t j = 0; j < d; ++j) tmp[j] = y[j] + h * k3[j];
    field(tmp, t + h, k4);
    for (std::size_t j = 0; j < d; ++j) {
      y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    if (!all_finite(y)) throw std::runtime_error("flow_sample: ODE diverged");
  }
  return y;
}

FieldFn gaussian_interpolation_field(double mean, double sd) {
  const double s2 = sd * sd;
  return [mean, s2](std::span<const double> y, double t, std::span<double> out) {
    const double one_mt = 1.0 - t;
    const double var_z = one_mt * one_mt + t * t * s2;
    const double slope = (t * s2 - one_mt) / var_z;
    for (std::size_t j = 0; j < y.size(); ++j) {
      out[j] = mean + slope * (y[j] - t * mean);
    }
  };
}

std::vector<double> gaussian_interpolation_exact(double mean, double sd,
                                                 std::span<const double> u) {
  std::vector<double> out(u.size());
  for (std::size_t j = 0; j < u.size(); ++j) out[j] = mean + sd * u[j];
  return out;
}

}  // namespace doublegen
