#pragma once

// Dense operations used by the SetNet and sub-DDM losses. Every
// differentiable operation comes with a backward function that maps the
// gradient of a scalar loss w.r.t. the output to gradients w.r.t. the inputs.
// All arithmetic is double precision.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dzsl/tensor.hpp"

namespace dzsl {

// Arguments of sqrt in the Hellinger gradient are clamped to this value.
inline constexpr double kSqrtClamp = 1e-12;

// ---------------------------------------------------------------------------
// Softmax family

std::vector<double> softmax(std::span<const double> logits);

// Softmax over the trailing axes of a [K, ...] tensor: each leading slice is
// normalized independently (max-subtracted). Throws InvalidInputError on
// non-finite input.
Tensor spatial_softmax(const Tensor& logits);
Tensor spatial_softmax_backward(const Tensor& probs, const Tensor& grad_probs);

// -ln softmax(logits)[label], log-sum-exp stabilized.
double cross_entropy_from_logits(std::span<const double> logits, std::size_t label);
// d/d logits = softmax(logits) - onehot(label).
std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t label);

// ---------------------------------------------------------------------------
// Divergences on the simplex

// 1 - sum_t sqrt(p_t q_t).
double hellinger_sq(std::span<const double> p, std::span<const double> q);
// Gradient w.r.t. p: -sqrt(q_t) / (2 sqrt(max(p_t, kSqrtClamp))).
std::vector<double> hellinger_sq_grad(std::span<const double> p, std::span<const double> q);

// KL(p || uniform) = sum_t p_t ln(p_t C), with 0 ln 0 = 0.
double kl_to_uniform(std::span<const double> p);
// Gradient of kl_to_uniform(softmax(z)) w.r.t. the logits z.
std::vector<double> kl_to_uniform_logit_grad(std::span<const double> logits);

// Shannon entropy in nats, 0 ln 0 = 0.
double entropy(std::span<const double> p);

// ---------------------------------------------------------------------------
// Linear algebra and activations

// [m, n] x [n, p] -> [m, p].
Tensor matmul(const Tensor& a, const Tensor& b);
struct MatmulGrads {
  Tensor a;
  Tensor b;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out);

// 1x1 convolution: [H, W, Cin] x [Cin, Cout] + [Cout] -> [H, W, Cout].
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);
struct Conv1x1Grads {
  Tensor x;
  Tensor weight;
  Tensor bias;
};
Conv1x1Grads conv1x1_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

Tensor relu(const Tensor& x);
// Passes grad_out where x > 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor scale_backward(const Tensor& grad_out, double factor);

// Mean over the H*W cells of an [H, W, C] tensor -> [C].
Tensor spatial_mean(const Tensor& x);
Tensor spatial_mean_backward(const Shape& input_shape, const Tensor& grad_out);

// ---------------------------------------------------------------------------
// Finite-difference verification

struct LossEval {
  double value = 0.0;
  std::vector<double> gradient;
};
using DifferentiableLoss = std::function<LossEval(std::span<const double>)>;

// Compares the analytic gradient at `params` against central differences
// (f(w + eps e_i) - f(w - eps e_i)) / (2 eps) for every coordinate. Returns
// the maximum of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double grad_check(const DifferentiableLoss& loss, std::span<const double> params, double eps);

}  // namespace dzsl
