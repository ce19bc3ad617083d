#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dzsl/tensor.hpp"

namespace dzsl {

// Per-class semantic vectors, one unit-norm row per class.
class SemanticTable {
 public:
  static constexpr double kNormTolerance = 1e-6;

  SemanticTable() = default;
  // Throws InvalidInputError on duplicate ids or rows that are not unit norm.
  SemanticTable(std::vector<ClassId> class_ids, Tensor vectors);

  // Scales every row to unit norm before validating.
  static SemanticTable normalized(std::vector<ClassId> class_ids, Tensor vectors);

  std::size_t size() const noexcept { return class_ids_.size(); }
  bool empty() const noexcept { return class_ids_.empty(); }
  std::size_t dim() const noexcept { return vectors_.rank() == 2 ? vectors_.dim(1) : 0; }

  const std::vector<ClassId>& class_ids() const noexcept { return class_ids_; }
  const Tensor& vectors() const noexcept { return vectors_; }
  std::span<const double> row(std::size_t d) const { return vectors_.slice(d); }

  std::optional<std::size_t> index_of(ClassId id) const;
  bool contains(ClassId id) const { return index_of(id).has_value(); }

  // Rows for `ids`, in the order given. Throws IndexError for unknown ids.
  SemanticTable subset(std::span<const ClassId> ids) const;

 private:
  std::vector<ClassId> class_ids_;
  Tensor vectors_;
};

}  // namespace dzsl
