#pragma once

#include <span>
#include <vector>

#include "dzsl/dataio.hpp"
#include "dzsl/metrics.hpp"
#include "dzsl/pipeline.hpp"

namespace dzsl {

// Unseen-class test samples classified over the unseen classes only.
EvalReport evaluate_zsl(const SetNetModel& model, const DatasetBundle& bundle);

// All test samples classified through the routed system. acc_seen and
// acc_unseen are per-class accuracies over seen and unseen test classes.
EvalReport evaluate_gzsl(const GzslSystem& sys, const DatasetBundle& bundle);

// All test samples classified by one model over every class (no routing).
EvalReport evaluate_gzsl_direct(const SetNetModel& model, const DatasetBundle& bundle);

struct OodDegrees {
  std::vector<double> seen;    // seen-class test samples
  std::vector<double> unseen;  // unseen-class test samples
};
OodDegrees ood_degrees(const DdmEnsemble& ensemble, const DatasetBundle& bundle);

// TNR@FNR curve over `fnr_grid` from test-set degrees. When the ensemble is
// calibrated, per_class/acc hold the per-class rate of correct seen/unseen
// routing at its theta.
EvalReport evaluate_ood(const DdmEnsemble& ensemble, const DatasetBundle& bundle,
                        std::span<const double> fnr_grid);

}  // namespace dzsl
