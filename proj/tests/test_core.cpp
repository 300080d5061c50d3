#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>

#include "doctest.h"
#include "doublegen/data.hpp"
#include "doublegen/mathutil.hpp"
#include "doublegen/rng.hpp"

using namespace doublegen;

namespace {

Dataset toy_dataset(std::size_t n, int p = 2) {
  Dataset data;
  RngStream rng(99, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Observation obs;
    obs.x.resize(p);
    rng.fill_uniform(obs.x);
    obs.a = i % 2 == 0 ? 1 : 0;
    obs.y = Outcome::real({static_cast<double>(i)});
    data.push_back(obs);
  }
  return data;
}

}  // namespace

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(42, 7), b(42, 7), c(42, 8);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  bool any_diff = false;
  RngStream a2(42, 7);
  for (int i = 0; i < 100; ++i) any_diff |= a2.next_u64() != c.next_u64();
  CHECK(any_diff);
}

TEST_CASE("rng uniforms live in [0,1) and normals have sane moments") {
  RngStream rng(1, 0);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("fork depends on identity, not consumption") {
  RngStream a(5, 1);
  RngStream b(5, 1);
  (void)b.uniform();
  (void)b.uniform();
  CHECK(a.fork(3).uniform() == b.fork(3).uniform());
  CHECK(a.fork(3).uniform() != a.fork(4).uniform());
}

TEST_CASE("inverse normal cdf round-trips the cdf") {
  for (double u : {0.001, 0.02425, 0.1, 0.5, 0.9, 0.99}) {
    CHECK(normal_cdf(inv_normal_cdf(u)) == doctest::Approx(u).epsilon(1e-7));
  }
  CHECK(inv_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("partition_folds produces floor/ceil sizes") {
  RngStream rng(3, 0);
  const auto f5 = partition_folds(toy_dataset(5), rng);
  CHECK(f5.fold1.size() == 2);
  CHECK(f5.fold2.size() == 3);

  RngStream rng1(3, 0);
  const auto f1 = partition_folds(toy_dataset(1), rng1);
  CHECK(f1.fold1.size() == 0);
  CHECK(f1.fold2.size() == 1);
}

TEST_CASE("partition_folds is deterministic and a true partition") {
  const auto data = toy_dataset(101);
  RngStream r1(7, 0), r2(7, 0);
  const auto a = partition_folds(data, r1);
  const auto b = partition_folds(data, r2);
  REQUIRE(a.fold1.size() == b.fold1.size());
  for (std::size_t i = 0; i < a.fold1.size(); ++i) {
    CHECK(a.fold1[i].y == b.fold1[i].y);
  }

  std::multiset<double> seen;
  for (const auto& obs : a.fold1) seen.insert(obs.y.reals()[0]);
  for (const auto& obs : a.fold2) seen.insert(obs.y.reals()[0]);
  CHECK(seen.size() == data.size());
  std::multiset<double> expect;
  for (const auto& obs : data) expect.insert(obs.y.reals()[0]);
  CHECK(seen == expect);
  CHECK(std::abs(static_cast<long>(a.fold1.size()) - static_cast<long>(a.fold2.size())) <= 1);
}

TEST_CASE("partition_folds rejects an empty dataset") {
  RngStream rng(0, 0);
  CHECK_THROWS_WITH_AS(partition_folds({}, rng), "partition_folds: empty dataset",
                       std::invalid_argument);
}

TEST_CASE("filter_treated keeps order and matching labels") {
  Dataset data;
  data.push_back({{0.1}, 1, Outcome::real({1.0})});
  data.push_back({{0.2}, 0, Outcome::real({0.0})});
  const auto treated = filter_treated(data, 1);
  REQUIRE(treated.size() == 1);
  CHECK(treated[0].y.reals()[0] == 1.0);

  CHECK(filter_treated(data, 2).empty());

  Dataset all_treated = {{{0.1}, 1, Outcome::real({1.0})}, {{0.2}, 1, Outcome::real({2.0})}};
  CHECK(filter_treated(all_treated, 1).size() == 2);
}

TEST_CASE("token sequence pad invariant") {
  CHECK(token_seq_valid(std::vector<int>{2, 3, 1}, 3));
  CHECK(token_seq_valid(std::vector<int>{2, 2, 2}, 3));
  CHECK(token_seq_valid(std::vector<int>{3, 1, 1}, 3));
  CHECK_FALSE(token_seq_valid(std::vector<int>{3, 2, 1}, 3));  // content after EOS
  CHECK_FALSE(token_seq_valid(std::vector<int>{2, 4, 1}, 3));  // out of range
}

TEST_CASE("dataset csv round-trips both outcome kinds") {
  const auto dir = std::filesystem::temp_directory_path() / "dg_core_test";
  std::filesystem::create_directories(dir);

  const auto data = toy_dataset(17, 3);
  write_dataset_csv(dir / "real.csv", data);
  const auto back = read_dataset_csv(dir / "real.csv");
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].x == data[i].x);
    CHECK(back[i].a == data[i].a);
    CHECK(back[i].y == data[i].y);
  }

  Dataset tokens;
  tokens.push_back({{1.0}, 1, Outcome::tokens({2, 3, 1})});
  tokens.push_back({{0.0}, 0, Outcome::tokens({3, 1, 1})});
  write_dataset_csv(dir / "tok.csv", tokens);
  const auto tok_back = read_dataset_csv(dir / "tok.csv");
  REQUIRE(tok_back.size() == 2);
  CHECK(tok_back[1].y == tokens[1].y);

  std::vector<Outcome> outs = {Outcome::real({1.5, -2.0}), Outcome::real({0.0, 3.25})};
  write_outcomes_csv(dir / "out.csv", outs);
  CHECK(read_outcomes_csv(dir / "out.csv") == outs);

  std::filesystem::remove_all(dir);
}

TEST_CASE("seeded sampling is byte-stable through csv") {
  const auto dir = std::filesystem::temp_directory_path() / "dg_core_test2";
  std::filesystem::create_directories(dir);
  for (int run = 0; run < 2; ++run) {
    write_dataset_csv(dir / ("d" + std::to_string(run) + ".csv"), toy_dataset(29));
  }
  std::ifstream f0(dir / "d0.csv"), f1(dir / "d1.csv");
  std::stringstream s0, s1;
  s0 << f0.rdbuf();
  s1 << f1.rdbuf();
  CHECK(s0.str() == s1.str());
  std::filesystem::remove_all(dir);
}
