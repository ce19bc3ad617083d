#include "dzsl/feature_map.hpp"

#include <string>
#include <utility>

#include "dzsl/error.hpp"

namespace dzsl {

FeatureMap::FeatureMap(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels), data_({height, width, channels}, fill) {
  if (height == 0 || width == 0 || channels == 0) {
    throw ShapeError("feature map dimensions must be positive");
  }
}

FeatureMap::FeatureMap(Tensor values) {
  if (values.rank() != 3 || values.size() == 0) {
    throw ShapeError("feature map needs a non-empty HxWxC tensor, got " +
                     shape_string(values.shape()));
  }
  height_ = values.dim(0);
  width_ = values.dim(1);
  channels_ = values.dim(2);
  data_ = std::move(values);
}

}  // namespace dzsl
