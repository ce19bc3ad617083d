#include "dzsl/pipeline.hpp"

#include <string>

#include "dzsl/error.hpp"

namespace dzsl {

GzslSystem::GzslSystem(DdmEnsemble detector, SetNetModel zsl_model, SetNetModel gzsl_model,
                       SemanticTable unseen_table, SemanticTable full_table)
    : detector_(std::move(detector)),
      zsl_model_(std::move(zsl_model)),
      gzsl_model_(std::move(gzsl_model)),
      unseen_table_(std::move(unseen_table)),
      full_table_(std::move(full_table)) {
  if (unseen_table_.empty()) throw InvalidInputError("unseen-class table is empty");
  if (unseen_table_.size() >= full_table_.size()) {
    throw InvalidInputError("unseen-class table must be a strict subset of the full table");
  }
  for (ClassId id : unseen_table_.class_ids()) {
    if (!full_table_.contains(id)) {
      throw InvalidInputError("unseen class " + std::to_string(id) + " missing from the full table");
    }
  }
}

ClassId classify_zsl(const SetNetModel& model, const FeatureMap& map,
                     const SemanticTable& unseen_table) {
  return predict(model, map, unseen_table);
}

ClassId classify_gzsl(const GzslSystem& sys, const FeatureMap& map, Domain domain) {
  if (domain == Domain::Unseen) return classify_zsl(sys.zsl_model(), map, sys.unseen_table());
  return predict(sys.gzsl_model(), map, sys.full_table());
}

ClassId classify_gzsl(const GzslSystem& sys, const FeatureMap& map) {
  return classify_gzsl(sys, map, detect(sys.detector(), map));
}

}  // namespace dzsl
