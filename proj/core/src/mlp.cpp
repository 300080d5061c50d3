#include "doublegen/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "doublegen/mathutil.hpp"
#include "json.hpp"

namespace doublegen {

namespace {

std::size_t expected_param_count(int m, int h, int q) {
  return static_cast<std::size_t>(h) * m + h + static_cast<std::size_t>(h) * h + h +
         static_cast<std::size_t>(q) * h + q;
}

}  // namespace

std::size_t Mlp::b1_offset() const {
  return static_cast<std::size_t>(hidden_dim) * input_dim;
}
std::size_t Mlp::w2_offset() const { return b1_offset() + hidden_dim; }
std::size_t Mlp::b2_offset() const {
  return w2_offset() + static_cast<std::size_t>(hidden_dim) * hidden_dim;
}
std::size_t Mlp::w3_offset() const { return b2_offset() + hidden_dim; }
std::size_t Mlp::b3_offset() const {
  return w3_offset() + static_cast<std::size_t>(output_dim) * hidden_dim;
}

Mlp Mlp::zeros(int input_dim, int hidden_dim, int output_dim) {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) {
    throw std::invalid_argument("Mlp: dimensions must be positive");
  }
  Mlp net;
  net.input_dim = input_dim;
  net.hidden_dim = hidden_dim;
  net.output_dim = output_dim;
  net.params.assign(expected_param_count(input_dim, hidden_dim, output_dim), 0.0);
  return net;
}

Mlp Mlp::random_init(int input_dim, int hidden_dim, int output_dim, RngStream& rng,
                     double scale) {
  Mlp net = zeros(input_dim, hidden_dim, output_dim);
  for (auto& w : net.params) w = scale * rng.normal();
  return net;
}

void mlp_forward(const Mlp& net, std::span<const double> input, std::span<double> output,
                 MlpWorkspace* ws) {
  const int m = net.input_dim, h = net.hidden_dim, q = net.output_dim;
  if (input.size() != static_cast<std::size_t>(m)) {
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  }
  if (output.size() != static_cast<std::size_t>(q)) {
    throw std::invalid_argument("mlp_forward: output dimension mismatch");
  }

  MlpWorkspace local;
  MlpWorkspace& w = ws ? *ws : local;
  w.h1.resize(h);
  w.h2.resize(h);

  const double* w1 = net.params.data();
  const double* b1 = net.params.data() + net.b1_offset();
  const double* w2 = net.params.data() + net.w2_offset();
  const double* b2 = net.params.data() + net.b2_offset();
  const double* w3 = net.params.data() + net.w3_offset();
  const double* b3 = net.params.data() + net.b3_offset();

  for (int i = 0; i < h; ++i) {
    double z = b1[i];
    const double* row = w1 + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) z += row[j] * input[j];
    w.h1[i] = std::tanh(z);
  }
  for (int i = 0; i < h; ++i) {
    double z = b2[i];
    const double* row = w2 + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) z += row[j] * w.h1[j];
    w.h2[i] = std::tanh(z);
  }
  for (int i = 0; i < q; ++i) {
    double z = b3[i];
    const double* row = w3 + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) z += row[j] * w.h2[j];
    output[i] = z;
  }

  if (ws) {
    ws->input.assign(input.begin(), input.end());
  }
}

void mlp_backward(const Mlp& net, const MlpWorkspace& ws, std::span<const double> cotangent,
                  std::span<double> param_grad, std::span<double> input_grad, double weight) {
  const int m = net.input_dim, h = net.hidden_dim, q = net.output_dim;
  if (cotangent.size() != static_cast<std::size_t>(q)) {
    throw std::invalid_argument("mlp_backward: cotangent dimension mismatch");
  }
  if (param_grad.size() != net.param_count()) {
    throw std::invalid_argument("mlp_backward: gradient buffer size mismatch");
  }
  if (!input_grad.empty() && input_grad.size() != static_cast<std::size_t>(m)) {
    throw std::invalid_argument("mlp_backward: input gradient size mismatch");
  }
  if (ws.input.size() != static_cast<std::size_t>(m) ||
      ws.h1.size() != static_cast<std::size_t>(h)) {
    throw std::invalid_argument("mlp_backward: workspace does not match a forward pass");
  }

  const double* w2 = net.params.data() + net.w2_offset();
  const double* w3 = net.params.data() + net.w3_offset();
  double* g_w1 = param_grad.data();
  double* g_b1 = param_grad.data() + net.b1_offset();
  double* g_w2 = param_grad.data() + net.w2_offset();
  double* g_b2 = param_grad.data() + net.b2_offset();
  double* g_w3 = param_grad.data() + net.w3_offset();
  double* g_b3 = param_grad.data() + net.b3_offset();

  auto& d2 = const_cast<MlpWorkspace&>(ws).d2;
  auto& d1 = const_cast<MlpWorkspace&>(ws).d1;
  d2.assign(h, 0.0);
  d1.assign(h, 0.0);

  // Output layer: out = W3 h2 + b3.
  for (int i = 0; i < q; ++i) {
    const double c = weight * cotangent[i];
    g_b3[i] += c;
    double* grow = g_w3 + static_cast<std::size_t>(i) * h;
    const double* wrow = w3 + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) {
      grow[j] += c * ws.h2[j];
      d2[j] += wrow[j] * cotangent[i];
    }
  }
  // Second hidden layer: h2 = tanh(W2 h1 + b2).
  for (int i = 0; i < h; ++i) {
    d2[i] *= 1.0 - ws.h2[i] * ws.h2[i];
    const double c = weight * d2[i];
    g_b2[i] += c;
    double* grow = g_w2 + static_cast<std::size_t>(i) * h;
    const double* wrow = w2 + static_cast<std::size_t>(i) * h;
    for (int j = 0; j < h; ++j) {
      grow[j] += c * ws.h1[j];
      d1[j] += wrow[j] * d2[i];
    }
  }
  // First hidden layer: h1 = tanh(W1 x + b1).
  for (int i = 0; i < h; ++i) {
    d1[i] *= 1.0 - ws.h1[i] * ws.h1[i];
    const double c = weight * d1[i];
    g_b1[i] += c;
    double* grow = g_w1 + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) grow[j] += c * ws.input[j];
  }
  if (!input_grad.empty()) {
    const double* w1 = net.params.data();
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int i = 0; i < h; ++i) s += w1[static_cast<std::size_t>(i) * m + j] * d1[i];
      input_grad[j] += weight * s;
    }
  }
}

AdamState::AdamState(std::size_t n, double learning_rate)
    : learning_rate(learning_rate), m(n, 0.0), v(n, 0.0) {
  if (learning_rate <= 0.0) throw std::invalid_argument("adam: learning rate must be positive");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!all_finite(grads)) throw std::runtime_error("adam_step: diverged");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

std::string mlp_to_json(const Mlp& net) {
  nlohmann::json j;
  j["widths"] = {net.input_dim, net.hidden_dim, net.hidden_dim, net.output_dim};
  const auto p = net.params;
  auto slice = [&](std::size_t begin, std::size_t end) {
    return std::vector<double>(p.begin() + begin, p.begin() + end);
  };
  j["weights"] = {slice(0, net.b1_offset()), slice(net.w2_offset(), net.b2_offset()),
                  slice(net.w3_offset(), net.b3_offset())};
  j["biases"] = {slice(net.b1_offset(), net.w2_offset()), slice(net.b2_offset(), net.w3_offset()),
                 slice(net.b3_offset(), net.param_count())};
  return j.dump();
}

Mlp mlp_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const auto widths = j.at("widths").get<std::vector<int>>();
  if (widths.size() != 4 || widths[1] != widths[2]) {
    throw std::runtime_error("mlp_from_json: unsupported widths");
  }
  Mlp net = Mlp::zeros(widths[0], widths[1], widths[3]);
  const auto weights = j.at("weights").get<std::vector<std::vector<double>>>();
  const auto biases = j.at("biases").get<std::vector<std::vector<double>>>();
  if (weights.size() != 3 || biases.size() != 3) {
    throw std::runtime_error("mlp_from_json: expected three layers");
  }
  auto put = (
      [&](const std::vector<double>& src, std::size_t offset) {
        std::copy(src.begin(), src.end(), net.params.begin() + offset);
      });
  put(weights[0], 0);
  put(biases[0], net.b1_offset());
  put(weights[1], net.w2_offset());
  put(biases[1], net.b2_offset());
  put(weights[2], net.w3_offset());
  put(biases[2], net.b3_offset());
  return net;
}

TimeConditionedNet::TimeConditionedNet(int dim, int hidden_dim)
    : dim_(dim), net_(Mlp::zeros(dim + static_cast<int>(kTimeFeatureCount), hidden_dim, dim)) {}

TimeConditionedNet::TimeConditionedNet(Mlp net) : net_(std::move(net)) {
  dim_ = net_.output_dim;
  if (net_.input_dim != dim_ + static_cast<int>(kTimeFeatureCount)) {
    throw std::invalid_argument("TimeConditionedNet: widths do not match a time-conditioned net");
  }
}

void TimeConditionedNet::eval(std::span<const double> y, double t, std::span<double> out) const {
  in_buf_.resize(y.size() + kTimeFeatureCount);
  std::copy(y.begin(), y.end(), in_buf_.begin());
  const auto tf = time_features(t);
  std::copy(tf.begin(), tf.end(), in_buf_.begin() + y.size());
  mlp_forward(net_, in_buf_, out, &ws_);
}

void TimeConditionedNet::eval_backward(std::span<const double> y, double t,
                                       std::span<const double> cotangent,
                                       std::span<double> param_grad, double weight) const {
  std::vector<double> out(dim_);
  eval(y, t, out);
  mlp_backward(net_, ws_, cotangent, param_grad, {}, weight);
}

}  // namespace doublegen
