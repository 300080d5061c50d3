#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace doublegen {

/// Seeded random stream with cheap, order-independent substream derivation.
///
/// A stream is identified by (seed, stream id); the same pair always yields
/// the same draw sequence. fork() derives a child stream from the parent's
/// identity alone, never from how many draws were consumed, so forked
/// substreams are reproducible regardless of evaluation order or threading.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64();

  /// Uniform draw in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform draw in [lo, hi).
  double uniform(double lo, double hi);

  /// Integer draw uniform over {0, ..., n-1}; n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal via the inverse-CDF transform of uniform().
  double normal();

  void fill_uniform(std::span<double> out);
  void fill_normal(std::span<double> out);

  /// Child stream determined purely by (seed, stream, a, b).
  RngStream fork(std::uint64_t a, std::uint64_t b = 0) const;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::array<std::uint64_t, 4> state_{};  // xoshiro256**
};

}  // namespace doublegen
