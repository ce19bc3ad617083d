#include "dzsl/semantic_table.hpp"

#include <cmath>
#include <set>
#include <string>

#include "dzsl/error.hpp"

namespace dzsl {

SemanticTable::SemanticTable(std::vector<ClassId> class_ids, Tensor vectors)
    : class_ids_(std::move(class_ids)), vectors_(std::move(vectors)) {
  if (vectors_.rank() != 2 || vectors_.dim(0) != class_ids_.size()) {
    throw ShapeError("semantic table expects a " + std::to_string(class_ids_.size()) +
                     "xS matrix, got " + shape_string(vectors_.shape()));
  }
  if (!class_ids_.empty() && vectors_.dim(1) == 0) throw ShapeError("semantic dimension is zero");
  std::set<ClassId> seen;
  for (std::size_t d = 0; d < class_ids_.size(); ++d) {
    if (!seen.insert(class_ids_[d]).second) {
      throw InvalidInputError("duplicate class id " + std::to_string(class_ids_[d]));
    }
    double sq = 0.0;
    for (double v : row(d)) {
      if (!std::isfinite(v)) throw InvalidInputError("non-finite semantic value");
      sq += v * v;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > kNormTolerance) {
      throw InvalidInputError("semantic row for class " + std::to_string(class_ids_[d]) +
                              " is not unit norm");
    }
  }
}

SemanticTable SemanticTable::normalized(std::vector<ClassId> class_ids, Tensor vectors) {
  if (vectors.rank() != 2) throw ShapeError("semantic matrix must be 2-D");
  for (std::size_t d = 0; d < vectors.dim(0); ++d) {
    auto r = vectors.slice(d);
    double sq = 0.0;
    for (double v : r) sq += v * v;
    if (sq == 0.0) throw InvalidInputError("cannot normalize an all-zero semantic row");
    const double inv = 1.0 / std::sqrt(sq);
    for (double& v : r) v *= inv;
  }
  return SemanticTable(std::move(class_ids), std::move(vectors));
}

std::optional<std::size_t> SemanticTable::index_of(ClassId id) const {
  for (std::size_t d = 0; d < class_ids_.size(); ++d) {
    if (class_ids_[d] == id) return d;
  }
  return std::nullopt;
}

SemanticTable SemanticTable::subset(std::span<const ClassId> ids) const {
  Tensor rows({ids.size(), dim()});
  std::vector<ClassId> out_ids;
  out_ids.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto d = index_of(ids[i]);
    if (!d) throw IndexError("class id " + std::to_string(ids[i]) + " not in semantic table");
    auto src = row(*d);
    std::copy(src.begin(), src.end(), rows.slice(i).begin());
    out_ids.push_back(ids[i]);
  }
  return SemanticTable(std::move(out_ids), std::move(rows));
}

}  // namespace dzsl
