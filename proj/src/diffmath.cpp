#include "dzsl/diffmath.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dzsl/error.hpp"

namespace dzsl {
namespace {

constexpr double kSimplexTolerance = 1e-6;

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInputError(std::string(what) + ": non-finite input");
  }
}

void require_simplex(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw InvalidInputError(std::string(what) + ": negative or NaN entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw InvalidInputError(std::string(what) + ": entries sum to " + std::to_string(sum));
  }
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInputError("softmax of an empty vector");
  require_finite(logits, "softmax");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

Tensor spatial_softmax(const Tensor& logits) {
  if (logits.rank() < 2 || logits.size() == 0) {
    throw ShapeError("spatial_softmax expects a non-empty [K, ...] tensor, got " +
                     shape_string(logits.shape()));
  }
  require_finite(logits.values(), "spatial_softmax");
  Tensor out(logits.shape());
  for (std::size_t k = 0; k < logits.dim(0); ++k) {
    auto p = softmax(logits.slice(k));
    std::copy(p.begin(), p.end(), out.slice(k).begin());
  }
  return out;
}

Tensor spatial_softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
  if (probs.shape() != grad_probs.shape()) throw ShapeError("spatial_softmax_backward: shape mismatch");
  Tensor grad(probs.shape());
  for (std::size_t k = 0; k < probs.dim(0); ++k) {
    auto p = probs.slice(k);
    auto g = grad_probs.slice(k);
    double dot = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) dot += p[t] * g[t];
    auto out = grad.slice(k);
    for (std::size_t t = 0; t < p.size(); ++t) out[t] = p[t] * (g[t] - dot);
  }
  return grad;
}

double cross_entropy_from_logits(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  }
  require_finite(logits, "cross_entropy_from_logits");
  return log_sum_exp(logits) - logits[label];
}

std::vector<double> cross_entropy_grad(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  }
  auto g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

double hellinger_sq(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw ShapeError("hellinger_sq: lengths " + std::to_string(p.size()) + " and " +
                     std::to_string(q.size()));
  }
  require_simplex(p, "hellinger_sq");
  require_simplex(q, "hellinger_sq");
  double bc = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) bc += std::sqrt(p[t] * q[t]);
  return std::clamp(1.0 - bc, 0.0, 1.0);
}

std::vector<double> hellinger_sq_grad(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("hellinger_sq_grad: length mismatch");
  std::vector<double> g(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) {
    g[t] = -0.5 * std::sqrt(std::max(q[t], 0.0)) / std::sqrt(std::max(p[t], kSqrtClamp));
  }
  return g;
}

double kl_to_uniform(std::span<const double> p) {
  if (p.empty()) throw InvalidInputError("kl_to_uniform: zero classes");
  require_simplex(p, "kl_to_uniform");
  const double c = static_cast<double>(p.size());
  double kl = 0.0;
  for (double v : p) {
    if (v > 0.0) kl += v * std::log(v * c);
  }
  return std::max(kl, 0.0);
}

std::vector<double> kl_to_uniform_logit_grad(std::span<const double> logits) {
  // With p = softmax(z): dKL/dz_t = p_t (ln(p_t C) - KL).
  auto p = softmax(logits);
  const double c = static_cast<double>(p.size());
  std::vector<double> lg(p.size());
  double kl = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    lg[t] = p[t] > 0.0 ? std::log(p[t] * c) : 0.0;
    kl += p[t] * lg[t];
  }
  std::vector<double> g(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) g[t] = p[t] * (lg[t] - kl);
  return g;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw InvalidInputError("entropy: negative or NaN entry");
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j) out.at(i, j) += aik * b.at(k, j);
    }
  }
  return out;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out) {
  require_rank(grad_out, 2, "matmul_backward");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (grad_out.dim(0) != m || grad_out.dim(1) != p) throw ShapeError("matmul_backward: grad shape");
  MatmulGrads g{Tensor({m, n}), Tensor({n, p})};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      double acc = 0.0;
      const double aik = a.at(i, k);
      for (std::size_t j = 0; j < p; ++j) {
        acc += grad_out.at(i, j) * b.at(k, j);
        g.b.at(k, j) += aik * grad_out.at(i, j);
      }
      g.a.at(i, k) = acc;
    }
  }
  return g;
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 3, "conv1x1");
  require_rank(weight, 2, "conv1x1 weight");
  require_rank(bias, 1, "conv1x1 bias");
  const std::size_t cin = x.dim(2), cout = weight.dim(1);
  if (weight.dim(0) != cin || bias.dim(0) != cout) {
    throw ShapeError("conv1x1: input channels " + std::to_string(cin) + ", weight " +
                     shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t cells = x.dim(0) * x.dim(1);
  Tensor y = matmul(x.reshaped({cells, cin}), weight);
  for (std::size_t t = 0; t < cells; ++t) {
    for (std::size_t j = 0; j < cout; ++j) y.at(t, j) += bias[j];
  }
  return y.reshaped({x.dim(0), x.dim(1), cout});
}

Conv1x1Grads conv1x1_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  const std::size_t cells = x.dim(0) * x.dim(1);
  const std::size_t cin = x.dim(2), cout = weight.dim(1);
  if (grad_out.shape() != Shape{x.dim(0), x.dim(1), cout}) {
    throw ShapeError("conv1x1_backward: grad shape " + shape_string(grad_out.shape()));
  }
  const Tensor g2 = grad_out.reshaped({cells, cout});
  auto mg = matmul_backward(x.reshaped({cells, cin}), weight, g2);
  Tensor gb({cout});
  for (std::size_t t = 0; t < cells; ++t) {
    for (std::size_t j = 0; j < cout; ++j) gb[j] += g2.at(t, j);
  }
  return {mg.a.reshaped(x.shape()), std::move(mg.b), std::move(gb)};
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (x.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.values()) v *= factor;
  return out;
}

Tensor scale_backward(const Tensor& grad_out, double factor) { return scale(grad_out, factor); }

Tensor spatial_mean(const Tensor& x) {
  require_rank(x, 3, "spatial_mean");
  const std::size_t cells = x.dim(0) * x.dim(1), c = x.dim(2);
  Tensor out({c});
  for (std::size_t t = 0; t < cells; ++t) {
    for (std::size_t j = 0; j < c; ++j) out[j] += x[t * c + j];
  }
  for (double& v : out.values()) v /= static_cast<double>(cells);
  return out;
}

Tensor spatial_mean_backward(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() != 3 || grad_out.rank() != 1 || grad_out.dim(0) != input_shape[2]) {
    throw ShapeError("spatial_mean_backward: shape mismatch");
  }
  const std::size_t cells = input_shape[0] * input_shape[1], c = input_shape[2];
  Tensor g(input_shape);
  const double inv = 1.0 / static_cast<double>(cells);
  for (std::size_t t = 0; t < cells; ++t) {
    for (std::size_t j = 0; j < c; ++j) g[t * c + j] = grad_out[j] * inv;
  }
  return g;
}

double grad_check(const DifferentiableLoss& loss, std::span<const double> params, double eps) {
  if (!(eps > 0.0)) throw InvalidInputError("grad_check: eps must be positive");
  std::vector<double> w(params.begin(), params.end());
  const LossEval base = loss(w);
  if (!std::isfinite(base.value)) throw NumericalError("grad_check: non-finite loss at probe point");
  if (base.gradient.size() != w.size()) {
    throw ShapeError("grad_check: analytic gradient has " + std::to_string(base.gradient.size()) +
                     " entries for " + std::to_string(w.size()) + " parameters");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = w[i];
    w[i] = orig + eps;
    const double up = loss(w).value;
    w[i] = orig - eps;
    const double down = loss(w).value;
    w[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("grad_check: non-finite loss near coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = base.gradient[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace dzsl
