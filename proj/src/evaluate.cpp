#include "dzsl/evaluate.hpp"

#include <string>

#include "dzsl/error.hpp"

namespace dzsl {
namespace {

std::vector<ClassId> labels_of(const DatasetBundle& b, std::span<const std::size_t> idx) {
  std::vector<ClassId> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(b.labels[i]);
  return out;
}

template <typename Classify>
EvalReport evaluate_routed(const DatasetBundle& bundle, Classify&& classify) {
  const auto seen_idx = bundle.seen_test_indices();
  const auto unseen_idx = bundle.unseen_test_indices();
  if (seen_idx.empty() || unseen_idx.empty()) {
    throw InvalidInputError("GZSL evaluation needs both seen and unseen test samples");
  }
  std::vector<ClassId> seen_pred, unseen_pred;
  for (std::size_t i : seen_idx) seen_pred.push_back(classify(bundle.features[i]));
  for (std::size_t i : unseen_idx) unseen_pred.push_back(classify(bundle.features[i]));
  const auto seen_labels = labels_of(bundle, seen_idx);
  const auto unseen_labels = labels_of(bundle, unseen_idx);

  EvalReport r;
  r.acc_seen = per_class_top1(seen_pred, seen_labels, bundle.split.seen);
  r.acc_unseen = per_class_top1(unseen_pred, unseen_labels, bundle.split.unseen);
  r.h = harmonic_mean(*r.acc_unseen, *r.acc_seen);
  r.per_class = per_class_accuracy(seen_pred, seen_labels, bundle.split.seen);
  for (const auto& [id, a] : per_class_accuracy(unseen_pred, unseen_labels, bundle.split.unseen)) {
    r.per_class[id] = a;
  }
  double sum = 0.0;
  for (const auto& [id, a] : r.per_class) sum += a;
  r.acc = sum / static_cast<double>(r.per_class.size());
  return r;
}

}  // namespace

EvalReport evaluate_zsl(const SetNetModel& model, const DatasetBundle& bundle) {
  const auto idx = bundle.unseen_test_indices();
  if (idx.empty()) throw InvalidInputError("bundle has no unseen-class test samples");
  const SemanticTable table = bundle.unseen_table();
  std::vector<ClassId> preds;
  preds.reserve(idx.size());
  for (std::size_t i : idx) preds.push_back(classify_zsl(model, bundle.features[i], table));
  const auto labels = labels_of(bundle, idx);
  EvalReport r;
  r.per_class = per_class_accuracy(preds, labels, bundle.split.unseen);
  r.acc = per_class_top1(preds, labels, bundle.split.unseen);
  r.acc_unseen = r.acc;
  return r;
}

EvalReport evaluate_gzsl(const GzslSystem& sys, const DatasetBundle& bundle) {
  return evaluate_routed(bundle, [&](const FeatureMap& m) { return classify_gzsl(sys, m); });
}

EvalReport evaluate_gzsl_direct(const SetNetModel& model, const DatasetBundle& bundle) {
  return evaluate_routed(bundle, [&](const FeatureMap& m) {
    return predict(model, m, bundle.semantics);
  });
}

OodDegrees ood_degrees(const DdmEnsemble& ensemble, const DatasetBundle& bundle) {
  OodDegrees d;
  for (std::size_t i : bundle.seen_test_indices()) d.seen.push_back(ensemble.degree(bundle.features[i]));
  for (std::size_t i : bundle.unseen_test_indices()) d.unseen.push_back(ensemble.degree(bundle.features[i]));
  return d;
}

EvalReport evaluate_ood(const DdmEnsemble& ensemble, const DatasetBundle& bundle,
                        std::span<const double> fnr_grid) {
  const auto deg = ood_degrees(ensemble, bundle);
  EvalReport r;
  r.tnr_at_fnr = tnr_at_fnr(deg.seen, deg.unseen, fnr_grid);
  if (ensemble.calibrated()) {
    std::vector<ClassId> labels, routed_ok;
    const auto seen_idx = bundle.seen_test_indices();
    const auto unseen_idx = bundle.unseen_test_indices();
    // Encode "routed correctly" as predicting the true label.
    for (std::size_t j = 0; j < seen_idx.size(); ++j) {
      labels.push_back(bundle.labels[seen_idx[j]]);
      routed_ok.push_back(deg.seen[j] < ensemble.theta() ? ~labels.back() : labels.back());
    }
    for (std::size_t j = 0; j < unseen_idx.size(); ++j) {
      labels.push_back(bundle.labels[unseen_idx[j]]);
      routed_ok.push_back(deg.unseen[j] < ensemble.theta() ? labels.back() : ~labels.back());
    }
    r.per_class = per_class_accuracy(routed_ok, labels, bundle.semantics.class_ids());
    r.acc = per_class_top1(routed_ok, labels, bundle.semantics.class_ids());
  }
  return r;
}

}  // namespace dzsl
