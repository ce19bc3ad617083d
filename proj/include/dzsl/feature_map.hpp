#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dzsl/tensor.hpp"

namespace dzsl {

// H x W x C backbone output, channel-last. Cells are addressed either as
// (h, w) or by flat index t = h * W + w.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  explicit FeatureMap(Tensor values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t cells() const noexcept { return height_ * width_; }

  double& at(std::size_t h, std::size_t w, std::size_t c) { return data_.at(h, w, c); }
  double at(std::size_t h, std::size_t w, std::size_t c) const { return data_.at(h, w, c); }

  // Channel vector of flat cell t.
  std::span<const double> cell(std::size_t t) const {
    return data_.values().subspan(t * channels_, channels_);
  }
  std::span<double> cell(std::size_t t) { return data_.values().subspan(t * channels_, channels_); }

  const Tensor& tensor() const noexcept { return data_; }
  Tensor& tensor() noexcept { return data_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  Tensor data_;
};

}  // namespace dzsl
