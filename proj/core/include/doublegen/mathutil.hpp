#pragma once

#include <array>
#include <cstddef>
#include <span>

namespace doublegen {

/// Logistic sigmoid 1 / (1 + exp(-z)), stable for large |z|.
double expit(double z);

/// Inverse of expit; p must lie in (0, 1).
double logit(double p);

/// Standard normal CDF.
double normal_cdf(double z);

/// Standard normal quantile via the Acklam rational approximation
/// (max relative error about 1.15e-9). Inputs are clamped into the
/// open unit interval so the result is always finite.
double inv_normal_cdf(double u);

/// Time embedding used by field/score networks: (t, sin 2*pi*t, cos 2*pi*t).
constexpr std::size_t kTimeFeatureCount = 3;
std::array<double, kTimeFeatureCount> time_features(double t);

/// Dot product of equal-length spans.
double dot(std::span<const double> a, std::span<const double> b);

/// Squared Euclidean distance between equal-length spans.
double squared_distance(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> v);

}  // namespace doublegen
