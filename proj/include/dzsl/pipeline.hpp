#pragma once

#include "dzsl/feature_map.hpp"
#include "dzsl/id3m.hpp"
#include "dzsl/semantic_table.hpp"
#include "dzsl/setnet.hpp"

namespace dzsl {

// ID3M in front of two SetNets: inputs flagged unseen are classified over the
// unseen classes by the ZSL model, the rest over all classes by the GZSL
// model. Passing the same model twice shares it between both routes.
class GzslSystem {
 public:
  // Throws InvalidInputError unless the unseen table is a strict subset (by
  // class id) of the full table.
  GzslSystem(DdmEnsemble detector, SetNetModel zsl_model, SetNetModel gzsl_model,
             SemanticTable unseen_table, SemanticTable full_table);

  const DdmEnsemble& detector() const noexcept { return detector_; }
  const SetNetModel& zsl_model() const noexcept { return zsl_model_; }
  const SetNetModel& gzsl_model() const noexcept { return gzsl_model_; }
  const SemanticTable& unseen_table() const noexcept { return unseen_table_; }
  const SemanticTable& full_table() const noexcept { return full_table_; }

 private:
  DdmEnsemble detector_;
  SetNetModel zsl_model_;
  SetNetModel gzsl_model_;
  SemanticTable unseen_table_;
  SemanticTable full_table_;
};

ClassId classify_zsl(const SetNetModel& model, const FeatureMap& map,
                     const SemanticTable& unseen_table);

// Routes with the system's detector.
ClassId classify_gzsl(const GzslSystem& sys, const FeatureMap& map);
// Routes as if the detector had returned `domain`.
ClassId classify_gzsl(const GzslSystem& sys, const FeatureMap& map, Domain domain);

}  // namespace dzsl
