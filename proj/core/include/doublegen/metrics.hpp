#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "doublegen/rng.hpp"

namespace doublegen {

/// Exact empirical 1-Wasserstein distance on the line: mean absolute
/// difference of sorted samples. Unequal sizes are handled by downsampling
/// the larger set without replacement under the given rng.
double wasserstein1_1d(std::span<const double> a, std::span<const double> b,
                       RngStream rng = RngStream(0, 0));

/// Sliced W1 for d >= 2: average of wasserstein1_1d over random unit-sphere
/// projections drawn from rng.
double sliced_w1(const std::vector<std::vector<double>>& a,
                 const std::vector<std::vector<double>>& b, int projections, RngStream rng);

/// Binned total variation (1/2) sum |freq_a - freq_b| over the bins defined
/// by strictly increasing edges, with overflow bins at both ends.
double tv_binned(std::span<const double> a, std::span<const double> b,
                 std::span<const double> edges);

/// Equal-width bin edges spanning the pooled min/max of both samples.
std::vector<double> equal_width_edges(std::span<const double> a, std::span<const double> b,
                                      int bins);

/// KL divergence sum p_i log(p_i / q_i) with 0 log 0 = 0; +infinity when p
/// has mass outside q's support.
double kl_categorical(std::span<const double> p, std::span<const double> q);

struct MetricReport {
  std::string scenario;
  std::string method;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  long n = 0;
};

/// Appends reports to a CSV with columns scenario,method,metric,value,seed,n,
/// writing the header when the file does not exist yet.
void append_metric_reports(const std::filesystem::path& path,
                           std::span<const MetricReport> reports);

std::vector<MetricReport> read_metric_reports(const std::filesystem::path& path);

}  // namespace doublegen
