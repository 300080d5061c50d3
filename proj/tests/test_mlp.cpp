#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "doublegen/mathutil.hpp"
#include "doublegen/mlp.hpp"

using namespace doublegen;

namespace {

/// <cotangent, forward(input)> as a scalar function of the parameters.
double scalar_output(const Mlp& net, std::span<const double> input,
                     std::span<const double> cot) {
  std::vector<double> out(net.output_dim);
  mlp_forward(net, input, out);
  return dot(out, cot);
}

}  // namespace

TEST_CASE("all-zero network maps everything to zero") {
  const Mlp net = Mlp::zeros(3, 4, 2);
  std::vector<double> out(2, 99.0);
  mlp_forward(net, std::vector<double>{1.0, -2.0, 0.5}, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
}

TEST_CASE("output bias alone gives a constant network") {
  Mlp net = Mlp::zeros(1, 1, 1);
  net.params[net.b3_offset()] = 2.5;
  std::vector<double> out(1);
  mlp_forward(net, std::vector<double>{-7.0}, out);
  CHECK(out[0] == 2.5);
  mlp_forward(net, std::vector<double>{3.0}, out);
  CHECK(out[0] == 2.5);
}

TEST_CASE("forward is deterministic") {
  RngStream rng(5, 0);
  const Mlp net = Mlp::random_init(4, 8, 3, rng);
  std::vector<double> in = {0.3, -1.0, 2.0, 0.1}, o1(3), o2(3);
  mlp_forward(net, in, o1);
  mlp_forward(net, in, o2);
  CHECK(o1 == o2);
}

TEST_CASE("dimension mismatches are rejected") {
  const Mlp net = Mlp::zeros(3, 4, 2);
  std::vector<double> out(2);
  CHECK_THROWS_AS(mlp_forward(net, std::vector<double>{1.0}, out), std::invalid_argument);
  std::vector<double> bad_out(1);
  CHECK_THROWS_AS(mlp_forward(net, std::vector<double>{1.0, 2.0, 3.0}, bad_out),
                  std::invalid_argument);
}

TEST_CASE("zero cotangent gives zero gradients") {
  RngStream rng(6, 0);
  const Mlp net = Mlp::random_init(2, 5, 2, rng);
  MlpWorkspace ws;
  std::vector<double> out(2), grad(net.param_count(), 0.0), in_grad(2, 0.0);
  mlp_forward(net, std::vector<double>{0.5, -0.5}, out, &ws);
  mlp_backward(net, ws, std::vector<double>{0.0, 0.0}, grad, in_grad);
  for (double g : grad) CHECK(g == 0.0);
  for (double g : in_grad) CHECK(g == 0.0);
}

TEST_CASE("output bias gradient equals the cotangent") {
  RngStream rng(7, 0);
  const Mlp net = Mlp::random_init(1, 3, 1, rng);
  MlpWorkspace ws;
  std::vector<double> out(1), grad(net.param_count(), 0.0);
  mlp_forward(net, std::vector<double>{0.2}, out, &ws);
  mlp_backward(net, ws, std::vector<double>{1.75}, grad);
  CHECK(grad[net.b3_offset()] == doctest::Approx(1.75));
}

TEST_CASE("analytic gradients match central finite differences") {
  RngStream rng(2024, 0);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng.uniform_index(4));
    const int hidden = 2 + static_cast<int>(rng.uniform_index(6));
    const int q = 1 + static_cast<int>(rng.uniform_index(3));
    Mlp net = Mlp::random_init(m, hidden, q, rng, 0.6);
    std::vector<double> input(m), cot(q);
    rng.fill_normal(input);
    rng.fill_normal(cot);

    MlpWorkspace ws;
    std::vector<double> out(q), grad(net.param_count(), 0.0), in_grad(m, 0.0);
    mlp_forward(net, input, out, &ws);
    mlp_backward(net, ws, cot, grad, in_grad);

    for (std::size_t i = 0; i < net.param_count(); ++i) {
      const double saved = net.params[i];
      net.params[i] = saved + h;
      const double up = scalar_output(net, input, cot);
      net.params[i] = saved - h;
      const double down = scalar_output(net, input, cot);
      net.params[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(fd), std::abs(grad[i])});
      CHECK(std::abs(fd - grad[i]) / denom <= 1e-5);
    }
    // Input gradient against finite differences too.
    for (int i = 0; i < m; ++i) {
      std::vector<double> shifted(input.begin(), input.end());
      shifted[i] += h;
      const double up = scalar_output(net, shifted, cot);
      shifted[i] -= 2.0 * h;
      const double down = scalar_output(net, shifted, cot);
      const double fd = (up - down) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(fd), std::abs(in_grad[i])});
      CHECK(std::abs(fd - in_grad[i]) / denom <= 1e-5);
    }
  }
}

TEST_CASE("bounded inputs and weights keep outputs finite") {
  RngStream rng(8, 0);
  const Mlp net = Mlp::random_init(3, 16, 2, rng, 3.0);
  std::vector<double> out(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> in = {rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0),
                              rng.uniform(-10.0, 10.0)};
    mlp_forward(net, in, out);
    CHECK(all_finite(out));
  }
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  std::vector<double> params = {1.0, -2.0, 3.0};
  const std::vector<double> zeros(3, 0.0);
  AdamState state(3, 0.1);
  for (int i = 0; i < 5; ++i) adam_step(params, zeros, state);
  CHECK(params == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam moves against the gradient sign on the first step") {
  std::vector<double> params = {0.0, 0.0};
  const std::vector<double> grads = {3.0, -0.25};
  AdamState state(2, 0.05);
  adam_step(params, grads, state);
  CHECK(params[0] < 0.0);
  CHECK(params[1] > 0.0);
  CHECK(state.step == 1);
}

TEST_CASE("adam trajectories are deterministic") {
  auto run = [] {
    std::vector<double> params = {0.5, -0.5};
    AdamState state(2, 0.01);
    RngStream rng(11, 0);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> grads = {rng.normal(), rng.normal()};
      adam_step(params, grads, state);
    }
    return params;
  };
  CHECK(run() == run());
}

TEST_CASE("adam rejects non-finite gradients") {
  std::vector<double> params = {0.0};
  std::vector<double> grads = {std::nan("")};
  AdamState state(1, 0.1);
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state), "adam_step: diverged",
                       std::runtime_error);
}

TEST_CASE("mlp json round trip") {
  RngStream rng(21, 0);
  const Mlp net = Mlp::random_init(3, 5, 2, rng);
  const Mlp back = mlp_from_json(mlp_to_json(net));
  CHECK(back.input_dim == net.input_dim);
  CHECK(back.params == net.params);
}

TEST_CASE("time-conditioned net appends the time embedding") {
  RngStream rng(22, 0);
  const Mlp raw = Mlp::random_init(1 + static_cast<int>(kTimeFeatureCount), 6, 1, rng);
  const TimeConditionedNet net(raw);
  const double t = 0.37;
  std::vector<double> out(1);
  net.eval(std::vector<double>{0.8}, t, out);

  const auto tf = time_features(t);
  std::vector<double> manual_in = {0.8, tf[0], tf[1], tf[2]};
  std::vector<double> manual_out(1);
  mlp_forward(raw, manual_in, manual_out);
  CHECK(out[0] == manual_out[0]);
}
