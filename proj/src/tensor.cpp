#include "dzsl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "dzsl/error.hpp"

namespace dzsl {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                     std::to_string(values_.size()) + " values");
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[axis];
}

std::span<double> Tensor::slice(std::size_t i) {
  const std::size_t stride = values_.size() / shape_.at(0);
  return std::span<double>(values_).subspan(i * stride, stride);
}

std::span<const double> Tensor::slice(std::size_t i) const {
  const std::size_t stride = values_.size() / shape_.at(0);
  return std::span<const double>(values_).subspan(i * stride, stride);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

std::vector<double> flatten(const ConstParamRefs& params) {
  std::vector<double> flat;
  for (const auto& [name, t] : params) {
    flat.insert(flat.end(), t->values().begin(), t->values().end());
  }
  return flat;
}

std::vector<double> flatten(const GradientSet& grads, const ConstParamRefs& order) {
  std::vector<double> flat;
  for (const auto& [name, t] : order) {
    auto it = grads.find(name);
    if (it == grads.end()) throw IndexError("no gradient for parameter '" + name + "'");
    if (it->second.shape() != t->shape()) {
      throw ShapeError("gradient for '" + name + "' has shape " +
                       shape_string(it->second.shape()) + ", parameter has " +
                       shape_string(t->shape()));
    }
    flat.insert(flat.end(), it->second.values().begin(), it->second.values().end());
  }
  return flat;
}

void assign(const ParamRefs& params, std::span<const double> flat) {
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    if (offset + t->size() > flat.size()) throw ShapeError("flat parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t->size(), t->values().begin());
    offset += t->size();
  }
  if (offset != flat.size()) throw ShapeError("flat parameter vector too long");
}

void accumulate(GradientSet& into, const GradientSet& g, double weight) {
  for (const auto& [name, t] : g) {
    auto [it, inserted] = into.try_emplace(name, t.shape(), 0.0);
    if (it->second.shape() != t.shape()) {
      throw ShapeError("gradient shape mismatch for '" + name + "'");
    }
    auto dst = it->second.values();
    auto src = t.values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += weight * src[i];
  }
}

void scale(GradientSet& g, double factor) {
  for (auto& [name, t] : g) {
    for (double& v : t.values()) v *= factor;
  }
}

void sgd_step(const ParamRefs& params, const GradientSet& grads, double learning_rate) {
  for (const auto& [name, t] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw IndexError("no gradient for parameter '" + name + "'");
    if (it->second.shape() != t->shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
    auto w = t->values();
    auto g = it->second.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * g[i];
  }
}

}  // namespace dzsl
