#include "doublegen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "doublegen/data.hpp"
#include "doublegen/mathutil.hpp"

namespace doublegen {

namespace {

std::vector<double> downsample(std::span<const double> v, std::size_t target, RngStream& rng) {
  // Partial Fisher-Yates: the first `target` positions end up a uniform
  // subsample without replacement.
  std::vector<double> out(v.begin(), v.end());
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t j = i + rng.uniform_index(out.size() - i);
    std::swap(out[i], out[j]);
  }
  out.resize(target);
  return out;
}

}  // namespace

double wasserstein1_1d(std::span<const double> a, std::span<const double> b, RngStream rng) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1_1d: empty input");
  std::vector<double> sa, sb;
  if (a.size() == b.size()) {
    sa.assign(a.begin(), a.end());
    sb.assign(b.begin(), b.end());
  } else if (a.size() > b.size()) {
    sa = downsample(a, b.size(), rng);
    sb.assign(b.begin(), b.end());
  } else {
    sa.assign(a.begin(), a.end());
    sb = downsample(b, a.size(), rng);
  }
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double total = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) total += std::abs(sa[i] - sb[i]);
  return total / static_cast<double>(sa.size());
}

double sliced_w1(const std::vector<std::vector<double>>& a,
                 const std::vector<std::vector<double>>& b, int projections, RngStream rng) {
  if (a.empty() || b.empty()) throw std::invalid_argument("sliced_w1: empty input");
  const std::size_t d = a.front().size();
  if (d < 2) throw std::invalid_argument("sliced_w1: need dimension >= 2");
  if (projections < 1) throw std::invalid_argument("sliced_w1: need at least one projection");

  std::vector<double> g(d), pa(a.size()), pb(b.size());
  double total = 0.0;
  for (int k = 0; k < projections; ++k) {
    double norm2 = 0.0;
    do {
      rng.fill_normal(g);
      norm2 = dot(g, g);
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& gi : g) gi *= inv;
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] = dot(a[i], g);
    for (std::size_t i = 0; i < b.size(); ++i) pb[i] = dot(b[i], g);
    total += wasserstein1_1d(pa, pb, rng.fork(static_cast<std::uint64_t>(k)));
  }
  return total / projections;
}

double tv_binned(std::span<const double> a, std::span<const double> b,
                 std::span<const double> edges) {
  if (a.empty() || b.empty()) throw std::invalid_argument("tv_binned: empty input");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i - 1] < edges[i])) {
      throw std::invalid_argument("tv_binned: edges must be strictly increasing");
    }
  }
  const std::size_t bins = edges.size() + 1;  // overflow bins at both ends
  std::vector<double> fa(bins, 0.0), fb(bins, 0.0);
  auto bin_of = [&](double v) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    return static_cast<std::size_t>(it - edges.begin());
  };
  for (double v : a) fa[bin_of(v)] += 1.0 / a.size();
  for (double v : b) fb[bin_of(v)] += 1.0 / b.size();
  double total = 0.0;
  for (std::size_t i = 0; i < bins; ++i) total += std::abs(fa[i] - fb[i]);
  return 0.5 * total;
}

std::vector<double> equal_width_edges(std::span<const double> a, std::span<const double> b,
                                      int bins) {
  if (bins < 1) throw std::invalid_argument("equal_width_edges: bins must be positive");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : a) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : b) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(lo < hi)) hi = lo + 1.0;
  std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) {
    edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
  }
  return edges;
}

double kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_categorical: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

void append_metric_reports(const std::filesystem::path& path,
                           std::span<const MetricReport> reports) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  if (fresh) os << "scenario,method,metric,value,seed,n\n";
  for (const auto& r : reports) {
    os << r.scenario << ',' << r.method << ',' << r.metric << ',' << format_double(r.value)
       << ',' << r.seed << ',' << r.n << '\n';
  }
}

std::vector<MetricReport> read_metric_reports(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("metrics csv: missing header");
  std::vector<MetricReport> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    MetricReport r;
    std::string value, seed, n;
    if (!std::getline(ss, r.scenario, ',') || !std::getline(ss, r.method, ',') ||
        !std::getline(ss, r.metric, ',') || !std::getline(ss, value, ',') ||
        !std::getline(ss, seed, ',') || !std::getline(ss, n, ',')) {
      throw std::runtime_error("metrics csv: malformed row");
    }
    r.value = std::stod(value);
    r.seed = std::stoull(seed);
    r.n = std::stol(n);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace doublegen
