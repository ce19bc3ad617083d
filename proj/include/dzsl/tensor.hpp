#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dzsl {

using Shape = std::vector<std::size_t>;
using ClassId = std::uint32_t;

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double& at(std::size_t i, std::size_t j) { return values_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return values_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Contiguous slice along the leading axis.
  std::span<double> slice(std::size_t i);
  std::span<const double> slice(std::size_t i) const;

  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

 private:
  Shape shape_;
  std::vector<double> values_;
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Bit-for-bit equality of shapes and values (distinguishes -0.0 from 0.0).
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Gradients keyed by parameter name; each entry has the parameter's shape.
using GradientSet = std::map<std::string, Tensor>;

// Named views over a model's trainable tensors, in a fixed order.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;
using ConstParamRefs = std::vector<std::pair<std::string, const Tensor*>>;

std::vector<double> flatten(const ConstParamRefs& params);
std::vector<double> flatten(const GradientSet& grads, const ConstParamRefs& order);
void assign(const ParamRefs& params, std::span<const double> flat);

// into[name] += weight * g[name]; missing entries in `into` are created.
void accumulate(GradientSet& into, const GradientSet& g, double weight = 1.0);
void scale(GradientSet& g, double factor);

// params[name] -= learning_rate * grads[name]; every parameter must have a
// gradient of matching shape.
void sgd_step(const ParamRefs& params, const GradientSet& grads, double learning_rate);

}  // namespace dzsl
