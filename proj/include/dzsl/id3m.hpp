#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dzsl/feature_map.hpp"
#include "dzsl/tensor.hpp"

namespace dzsl {

// Seen classes split into I disjoint folds of near-equal size.
struct FoldPartition {
  std::vector<std::vector<ClassId>> folds;

  std::size_t count() const noexcept { return folds.size(); }
  // Classes of every fold except `fold`.
  std::vector<ClassId> in_distribution(std::size_t fold) const;
};

// Seeded shuffle of `seen`, then round-robin assignment to `folds` folds.
FoldPartition partition_classes(std::span<const ClassId> seen, std::size_t folds,
                                std::uint64_t seed);

// Classifier trained with fold `fold` held out as virtual OOD data:
// pooled feature -> ReLU hidden layer -> logits over `id_classes`.
class SubDdm {
 public:
  SubDdm() = default;
  SubDdm(std::size_t fold, std::vector<ClassId> id_classes, Tensor w1, Tensor b1, Tensor w2,
         Tensor b2);

  static SubDdm initialize(std::size_t fold, std::vector<ClassId> id_classes,
                           std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

  std::size_t fold() const noexcept { return fold_; }
  const std::vector<ClassId>& id_classes() const noexcept { return id_classes_; }
  std::size_t input_dim() const { return w1_.dim(0); }
  std::size_t hidden_dim() const { return w1_.dim(1); }
  std::size_t output_dim() const noexcept { return id_classes_.size(); }

  std::vector<double> logits(std::span<const double> pooled) const;
  std::vector<double> predict_proba(std::span<const double> pooled) const;
  std::optional<std::size_t> label_index(ClassId id) const;

  // Names: w1, b1, w2, b2.
  ParamRefs parameters();
  ConstParamRefs parameters() const;

 private:
  std::size_t fold_ = 0;
  std::vector<ClassId> id_classes_;
  Tensor w1_;  // [V, hidden]
  Tensor b1_;  // [hidden]
  Tensor w2_;  // [hidden, n_id]
  Tensor b2_;  // [n_id]
};

// Sub-DDM input: the spatial mean of a feature map.
std::vector<double> pooled_features(const FeatureMap& map);

struct SubDdmLoss {
  double value = 0.0;
  GradientSet gradients;
};

// Mean cross entropy over the ID batch plus mean KL(p || uniform) over the
// OOD batch, with the uniform taken over the sub-DDM's own output classes.
// An empty batch contributes nothing.
SubDdmLoss subddm_loss(const SubDdm& ddm, std::span<const std::vector<double>> id_features,
                       std::span<const ClassId> id_labels,
                       std::span<const std::vector<double>> ood_features);

// max p - entropy(p) for p the sub-DDM's softmax output.
double confidence(const SubDdm& ddm, std::span<const double> pooled);

// Sorts descending (ties by position) and returns the mean of the top I-1
// scores minus the smallest.
double disagreement(std::span<const double> confidences);

// theta = (k+1)-th smallest degree with k = floor(n * target_fnr), so the
// strict rule `degree < theta` flags exactly k of n distinct degrees.
double calibrate_theta(std::span<const double> seen_degrees, double target_fnr);

// Number of calibration points the strict rule should flag.
std::size_t flagged_count(std::size_t n, double target_fnr);

enum class Domain { Seen, Unseen };

class DdmEnsemble {
 public:
  DdmEnsemble() = default;
  DdmEnsemble(FoldPartition partition, std::vector<SubDdm> members);

  const FoldPartition& partition() const noexcept { return partition_; }
  const std::vector<SubDdm>& members() const noexcept { return members_; }
  std::vector<SubDdm>& members() noexcept { return members_; }
  std::size_t size() const noexcept { return members_.size(); }

  bool calibrated() const noexcept { return theta_.has_value(); }
  // Throws StateError when uncalibrated.
  double theta() const;
  void set_theta(double theta);

  std::vector<double> confidences(std::span<const double> pooled) const;
  double degree(std::span<const double> pooled) const;
  double degree(const FeatureMap& map) const { return degree(pooled_features(map)); }

 private:
  FoldPartition partition_;
  std::vector<SubDdm> members_;
  std::optional<double> theta_;
};

// Unseen iff degree < theta.
Domain detect(const DdmEnsemble& ensemble, std::span<const double> pooled);
Domain detect(const DdmEnsemble& ensemble, const FeatureMap& map);

}  // namespace dzsl
