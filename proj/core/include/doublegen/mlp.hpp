#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "doublegen/rng.hpp"

namespace doublegen {

/// Two-hidden-layer tanh network with identity output, parameters stored as
/// one flat vector so the optimizer and serialization stay generic.
///
/// Layout: [W1 (h x m)] [b1 (h)] [W2 (h x h)] [b2 (h)] [W3 (q x h)] [b3 (q)],
/// all weight matrices row-major.
struct Mlp {
  int input_dim = 0;
  int hidden_dim = 0;
  int output_dim = 0;
  std::vector<double> params;

  static Mlp zeros(int input_dim, int hidden_dim, int output_dim);
  static Mlp random_init(int input_dim, int hidden_dim, int output_dim, RngStream& rng,
                         double scale = 0.2);

  std::size_t param_count() const { return params.size(); }

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const;
  std::size_t w2_offset() const;
  std::size_t b2_offset() const;
  std::size_t w3_offset() const;
  std::size_t b3_offset() const;
};

/// Scratch buffers reused across forward/backward calls to avoid allocation
/// in training loops. Holds the activations the backward pass needs.
struct MlpWorkspace {
  std::vector<double> h1, h2;        // post-tanh hidden activations
  std::vector<double> d1, d2;        // hidden cotangents
  std::vector<double> input;         // copy of the last forward input
};

/// Evaluates the network. If ws is given, activations are cached there so a
/// following mlp_backward call can reuse them.
void mlp_forward(const Mlp& net, std::span<const double> input, std::span<double> output,
                 MlpWorkspace* ws = nullptr);

/// Reverse-mode gradients of the forward map at the point recorded in ws.
/// Accumulates weight * d<cotangent, output>/dparams into param_grad and, when
/// input_grad is non-empty, weight * gradient w.r.t. the input into it.
void mlp_backward(const Mlp& net, const MlpWorkspace& ws, std::span<const double> cotangent,
                  std::span<double> param_grad, std::span<double> input_grad = {},
                  double weight = 1.0);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<double> m, v;

  explicit AdamState(std::size_t n, double learning_rate = 1e-3);
};

/// One bias-corrected adaptive-moment step. Throws "diverged" on non-finite
/// gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

std::string mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const std::string& text);

/// A network over (y, time embedding) -> R^dim, the hypothesis shape shared
/// by the flow and diffusion backends.
class TimeConditionedNet {
 public:
  TimeConditionedNet() = default;
  TimeConditionedNet(int dim, int hidden_dim) ;
  explicit TimeConditionedNet(Mlp net);

  int dim() const { return dim_; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  void eval(std::span<const double> y, double t, std::span<double> out) const;

  /// Backward through eval: accumulates weight * d<cot, out>/dparams.
  void eval_backward(std::span<const double> y, double t, std::span<const double> cotangent,
                     std::span<double> param_grad, double weight = 1.0) const;

 private:
  int dim_ = 0;
  Mlp net_;
  mutable MlpWorkspace ws_;
  mutable std::vector<double> in_buf_;
};

}  // namespace doublegen
