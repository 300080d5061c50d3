#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "doublegen/rng.hpp"

namespace doublegen {

enum class OutcomeKind { real_vector, token_seq };

/// Outcome of one record: either a real vector or a 1-based token sequence
/// where token k ends the content and token 1 pads every later position.
class Outcome {
 public:
  Outcome() : value_(std::vector<double>{}) {}

  static Outcome real(std::vector<double> v) { return Outcome(std::move(v)); }
  static Outcome tokens(std::vector<int> v) { return Outcome(std::move(v)); }

  OutcomeKind kind() const {
    return std::holds_alternative<std::vector<double>>(value_)
               ? OutcomeKind::real_vector
               : OutcomeKind::token_seq;
  }
  bool is_real() const { return kind() == OutcomeKind::real_vector; }

  const std::vector<double>& reals() const { return std::get<std::vector<double>>(value_); }
  const std::vector<int>& token_seq() const { return std::get<std::vector<int>>(value_); }

  std::size_t dim() const {
    return is_real() ? reals().size() : token_seq().size();
  }

  bool operator==(const Outcome&) const = default;

 private:
  explicit Outcome(std::vector<double> v) : value_(std::move(v)) {}
  explicit Outcome(std::vector<int> v) : value_(std::move(v)) {}

  std::variant<std::vector<double>, std::vector<int>> value_;
};

/// Checks entries lie in [1, k] and that the first occurrence of token k
/// forces every later position to hold token 1.
bool token_seq_valid(std::span<const int> seq, int k);

struct Observation {
  std::vector<double> x;
  int a = 0;
  Outcome y;
};

using Dataset = std::vector<Observation>;

struct FoldedDataset {
  Dataset fold1;  // size floor(n/2)
  Dataset fold2;  // size ceil(n/2)

  std::size_t size() const { return fold1.size() + fold2.size(); }
  const Dataset& fold(int j) const { return j == 1 ? fold1 : fold2; }
};

/// Uniformly random partition into folds of sizes floor(n/2) and ceil(n/2).
/// Each fold keeps the original dataset order of its members.
FoldedDataset partition_folds(const Dataset& dataset, RngStream& rng);

/// Observations with a == a_star, original order preserved.
Dataset filter_treated(const Dataset& dataset, int a_star);

/// CSV serialization. Columns: x_1..x_p, a, then y_1..y_d (reals) or
/// tok_1..tok_d (integers). The header row is mandatory.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// One-column-per-coordinate CSV of bare outcomes (y_* or tok_* headers).
void write_outcomes_csv(const std::filesystem::path& path, std::span<const Outcome> outcomes);
/// As above, with an explicit schema so an empty set still gets its header.
void write_outcomes_csv(const std::filesystem::path& path, std::span<const Outcome> outcomes,
                        OutcomeKind kind, std::size_t dim);
std::vector<Outcome> read_outcomes_csv(const std::filesystem::path& path);

/// Shortest-width formatting that round-trips doubles exactly; used for all
/// CSV output so reruns are byte-identical.
std::string format_double(double v);

}  // namespace doublegen
