#include "doublegen/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace doublegen {

bool token_seq_valid(std::span<const int> seq, int k) {
  bool ended = false;
  for (int tok : seq) {
    if (tok < 1 || tok > k) return false;
    if (ended && tok != 1) return false;
    if (tok == k) ended = true;
  }
  return true;
}

FoldedDataset partition_folds(const Dataset& dataset, RngStream& rng) {
  const std::size_t n = dataset.size();
  if (n == 0) throw std::invalid_argument("partition_folds: empty dataset");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.uniform_index(i + 1);
    std::swap(perm[i], perm[j]);
  }

  const std::size_t n1 = n / 2;
  std::vector<std::size_t> first(perm.begin(), perm.begin() + n1);
  std::vector<std::size_t> second(perm.begin() + n1, perm.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());

  FoldedDataset out;
  out.fold1.reserve(n1);
  out.fold2.reserve(n - n1);
  for (std::size_t i : first) out.fold1.push_back(dataset[i]);
  for (std::size_t i : second) out.fold2.push_back(dataset[i]);
  return out;
}

Dataset filter_treated(const Dataset& dataset, int a_star) {
  Dataset out;
  for (const auto& obs : dataset) {
    if (obs.a == a_star) out.push_back(obs);
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(len));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw std::runtime_error("csv: bad numeric field '" + s + "'");
  }
}

int parse_int(const std::string& s) {
  int value = 0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw std::runtime_error("csv: bad integer field '" + s + "'");
  }
  return value;
}

struct CsvSchema {
  std::size_t p = 0;
  std::size_t d = 0;
  bool tokens = false;
};

CsvSchema parse_header(const std::vector<std::string>& fields) {
  CsvSchema schema;
  std::size_t i = 0;
  while (i < fields.size() && fields[i].rfind("x_", 0) == 0) ++i;
  schema.p = i;
  if (i >= fields.size() || fields[i] != "a") {
    throw std::runtime_error("csv: expected column 'a' after features");
  }
  ++i;
  if (i < fields.size() && fields[i].rfind("tok_", 0) == 0) {
    schema.tokens = true;
  } else if (i < fields.size() && fields[i].rfind("y_", 0) == 0) {
    schema.tokens = false;
  } else {
    throw std::runtime_error("csv: expected y_* or tok_* outcome columns");
  }
  schema.d = fields.size() - i;
  return schema;
}

void write_outcome_header(std::ostream& os, const Outcome& y, bool leading_comma) {
  const char* prefix = y.is_real() ? "y_" : "tok_";
  for (std::size_t j = 0; j < y.dim(); ++j) {
    if (leading_comma || j > 0) os << ',';
    os << prefix << (j + 1);
  }
}

void write_outcome_fields(std::ostream& os, const Outcome& y, bool leading_comma) {
  if (y.is_real()) {
    for (std::size_t j = 0; j < y.dim(); ++j) {
      if (leading_comma || j > 0) os << ',';
      os << format_double(y.reals()[j]);
    }
  } else {
    for (std::size_t j = 0; j < y.dim(); ++j) {
      if (leading_comma || j > 0) os << ',';
      os << y.token_seq()[j];
    }
  }
}

}  // namespace

void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("write_dataset_csv: empty dataset");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());

  const auto& first = dataset.front();
  for (std::size_t i = 0; i < first.x.size(); ++i) {
    if (i > 0) os << ',';
    os << "x_" << (i + 1);
  }
  os << (first.x.empty() ? "a" : ",a");
  write_outcome_header(os, first.y, true);
  os << '\n';

  for (const auto& obs : dataset) {
    for (std::size_t i = 0; i < obs.x.size(); ++i) {
      if (i > 0) os << ',';
      os << format_double(obs.x[i]);
    }
    if (!obs.x.empty()) os << ',';
    os << obs.a;
    write_outcome_fields(os, obs.y, true);
    os << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());

  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: missing header");
  const CsvSchema schema = parse_header(split_csv_line(line));

  Dataset out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != schema.p + 1 + schema.d) {
      throw std::runtime_error("csv: row width does not match header");
    }
    Observation obs;
    obs.x.reserve(schema.p);
    for (std::size_t i = 0; i < schema.p; ++i) obs.x.push_back(parse_double(fields[i]));
    obs.a = parse_int(fields[schema.p]);
    if (schema.tokens) {
      std::vector<int> toks(schema.d);
      for (std::size_t j = 0; j < schema.d; ++j) toks[j] = parse_int(fields[schema.p + 1 + j]);
      obs.y = Outcome::tokens(std::move(toks));
    } else {
      std::vector<double> vals(schema.d);
      for (std::size_t j = 0; j < schema.d; ++j) vals[j] = parse_double(fields[schema.p + 1 + j]);
      obs.y = Outcome::real(std::move(vals));
    }
    out.push_back(std::move(obs));
  }
  return out;
}

void write_outcomes_csv(const std::filesystem::path& path, std::span<const Outcome> outcomes) {
  if (outcomes.empty()) {
    write_outcomes_csv(path, outcomes, OutcomeKind::real_vector, 1);
    return;
  }
  write_outcomes_csv(path, outcomes, outcomes.front().kind(), outcomes.front().dim());
}

void write_outcomes_csv(const std::filesystem::path& path, std::span<const Outcome> outcomes,
                        OutcomeKind kind, std::size_t dim) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  const char* prefix = kind == OutcomeKind::real_vector ? "y_" : "tok_";
  for (std::size_t j = 0; j < dim; ++j) {
    if (j > 0) os << ',';
    os << prefix << (j + 1);
  }
  os << '\n';
  for (const auto& y : outcomes) {
    write_outcome_fields(os, y, false);
    os << '\n';
  }
}

std::vector<Outcome> read_outcomes_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());

  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: missing header");
  const auto header = split_csv_line(line);
  if (header.empty()) throw std::runtime_error("csv: empty header");
  const bool tokens = header.front().rfind("tok_", 0) == 0;
  const std::size_t d = header.size();

  std::vector<Outcome> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != d) throw std::runtime_error("csv: row width does not match header");
    if (tokens) {
      std::vector<int> toks(d);
      for (std::size_t j = 0; j < d; ++j) toks[j] = parse_int(fields[j]);
      out.push_back(Outcome::tokens(std::move(toks)));
    } else {
      std::vector<double> vals(d);
      for (std::size_t j = 0; j < d; ++j) vals[j] = parse_double(fields[j]);
      out.push_back(Outcome::real(std::move(vals)));
    }
  }
  return out;
}

}  // namespace doublegen
