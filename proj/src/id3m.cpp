#include "dzsl/id3m.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "dzsl/diffmath.hpp"
#include "dzsl/error.hpp"

namespace dzsl {

std::vector<ClassId> FoldPartition::in_distribution(std::size_t fold) const {
  if (fold >= folds.size()) throw IndexError("fold " + std::to_string(fold) + " out of range");
  std::vector<ClassId> ids;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (i != fold) ids.insert(ids.end(), folds[i].begin(), folds[i].end());
  }
  return ids;
}

FoldPartition partition_classes(std::span<const ClassId> seen, std::size_t folds,
                                std::uint64_t seed) {
  if (folds < 2) throw InvalidInputError("need at least 2 folds to hold one out as virtual OOD");
  if (folds > seen.size()) {
    throw InvalidInputError("cannot split " + std::to_string(seen.size()) + " seen classes into " +
                            std::to_string(folds) + " folds");
  }
  if (std::set<ClassId>(seen.begin(), seen.end()).size() != seen.size()) {
    throw InvalidInputError("seen class ids are not unique");
  }
  std::vector<ClassId> order(seen.begin(), seen.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPartition p;
  p.folds.resize(folds);
  for (std::size_t i = 0; i < order.size(); ++i) p.folds[i % folds].push_back(order[i]);
  return p;
}

SubDdm::SubDdm(std::size_t fold, std::vector<ClassId> id_classes, Tensor w1, Tensor b1, Tensor w2,
               Tensor b2)
    : fold_(fold),
      id_classes_(std::move(id_classes)),
      w1_(std::move(w1)),
      b1_(std::move(b1)),
      w2_(std::move(w2)),
      b2_(std::move(b2)) {
  if (id_classes_.empty()) throw InvalidInputError("sub-DDM has no in-distribution classes");
  if (w1_.rank() != 2 || b1_.rank() != 1 || w2_.rank() != 2 || b2_.rank() != 1 ||
      b1_.dim(0) != w1_.dim(1) || w2_.dim(0) != w1_.dim(1) || w2_.dim(1) != id_classes_.size() ||
      b2_.dim(0) != id_classes_.size()) {
    throw ShapeError("sub-DDM parameter shapes are inconsistent with " +
                     std::to_string(id_classes_.size()) + " output classes");
  }
}

SubDdm SubDdm::initialize(std::size_t fold, std::vector<ClassId> id_classes, std::size_t input_dim,
                          std::size_t hidden, std::uint64_t seed) {
  if (input_dim == 0 || hidden == 0) throw InvalidInputError("sub-DDM dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  auto draw = [&rng](Shape shape, std::size_t fan_in) {
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(double(fan_in)),
                                                1.0 / std::sqrt(double(fan_in)));
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = dist(rng);
    return t;
  };
  const std::size_t n = id_classes.size();
  Tensor w1 = draw({input_dim, hidden}, input_dim);
  Tensor b1 = draw({hidden}, input_dim);
  Tensor w2 = draw({hidden, n}, hidden);
  Tensor b2 = draw({n}, hidden);
  return SubDdm(fold, std::move(id_classes), std::move(w1), std::move(b1), std::move(w2),
                std::move(b2));
}

namespace {

struct DdmForward {
  Tensor x;           // [1, V]
  Tensor hidden_pre;  // [1, hidden]
  Tensor hidden;
  std::vector<double> logits;
};

DdmForward forward(const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2,
                          std::span<const double> pooled) {
  if (pooled.size() != w1.dim(0)) {
    throw ShapeError("sub-DDM expects " + std::to_string(w1.dim(0)) + " features, got " +
                     std::to_string(pooled.size()));
  }
  DdmForward f;
  f.x = Tensor({1, pooled.size()}, std::vector<double>(pooled.begin(), pooled.end()));
  f.hidden_pre = matmul(f.x, w1);
  for (std::size_t j = 0; j < b1.size(); ++j) f.hidden_pre[j] += b1[j];
  f.hidden = relu(f.hidden_pre);
  Tensor out = matmul(f.hidden, w2);
  f.logits.assign(out.values().begin(), out.values().end());
  for (std::size_t j = 0; j < b2.size(); ++j) f.logits[j] += b2[j];
  return f;
}

}  // namespace

std::vector<double> SubDdm::logits(std::span<const double> pooled) const {
  return forward(w1_, b1_, w2_, b2_, pooled).logits;
}

std::vector<double> SubDdm::predict_proba(std::span<const double> pooled) const {
  return softmax(logits(pooled));
}

std::optional<std::size_t> SubDdm::label_index(ClassId id) const {
  auto it = std::find(id_classes_.begin(), id_classes_.end(), id);
  if (it == id_classes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - id_classes_.begin());
}

ParamRefs SubDdm::parameters() { return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}}; }

ConstParamRefs SubDdm::parameters() const {
  return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}};
}

std::vector<double> pooled_features(const FeatureMap& map) {
  const Tensor m = spatial_mean(map.tensor());
  return {m.values().begin(), m.values().end()};
}

SubDdmLoss subddm_loss(const SubDdm& ddm, std::span<const std::vector<double>> id_features,
                       std::span<const ClassId> id_labels,
                       std::span<const std::vector<double>> ood_features) {
  if (id_features.size() != id_labels.size()) {
    throw ShapeError("ID batch has " + std::to_string(id_features.size()) + " samples and " +
                     std::to_string(id_labels.size()) + " labels");
  }
  const auto params = ddm.parameters();
  const Tensor& w1 = *params[0].second;
  const Tensor& b1 = *params[1].second;
  const Tensor& w2 = *params[2].second;
  const Tensor& b2 = *params[3].second;

  SubDdmLoss out;
  for (const auto& [name, t] : params) out.gradients.emplace(name, Tensor(t->shape()));

  auto backprop = [&](const DdmForward& f, const std::vector<double>& dlogits, double weight) {
    const Tensor g_out({1, dlogits.size()}, dlogits);
    auto g2 = matmul_backward(f.hidden, w2, g_out);
    const Tensor dh = relu_backward(f.hidden_pre, g2.a);
    auto g1 = matmul_backward(f.x, w1, dh);
    GradientSet g;
    g["w1"] = std::move(g1.b);
    g["b1"] = dh.reshaped({dh.size()});
    g["w2"] = std::move(g2.b);
    g["b2"] = g_out.reshaped({g_out.size()});
    accumulate(out.gradients, g, weight);
  };

  if (!id_features.empty()) {
    const double w = 1.0 / static_cast<double>(id_features.size());
    for (std::size_t i = 0; i < id_features.size(); ++i) {
      auto label = ddm.label_index(id_labels[i]);
      if (!label) {
        throw IndexError("class " + std::to_string(id_labels[i]) + " is not an ID class of fold " +
                         std::to_string(ddm.fold()));
      }
      const auto f = forward(w1, b1, w2, b2, id_features[i]);
      out.value += w * cross_entropy_from_logits(f.logits, *label);
      backprop(f, cross_entropy_grad(f.logits, *label), w);
    }
  }
  if (!ood_features.empty()) {
    const double w = 1.0 / static_cast<double>(ood_features.size());
    for (const auto& x : ood_features) {
      const auto f = forward(w1, b1, w2, b2, x);
      out.value += w * kl_to_uniform(softmax(f.logits));
      backprop(f, kl_to_uniform_logit_grad(f.logits), w);
    }
  }
  return out;
}

double confidence(const SubDdm& ddm, std::span<const double> pooled) {
  const auto p = ddm.predict_proba(pooled);
  return *std::max_element(p.begin(), p.end()) - entropy(p);
}

double disagreement(std::span<const double> confidences) {
  const std::size_t n = confidences.size();
  if (n < 2) throw InvalidInputError("disagreement needs at least 2 confidence scores");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidences[a] > confidences[b];
  });
  double top = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) top += confidences[order[i]];
  top /= static_cast<double>(n - 1);
  return std::max(top - confidences[order[n - 1]], 0.0);
}

std::size_t flagged_count(std::size_t n, double target_fnr) {
  // The small offset keeps products such as 100 * 0.07 from flooring down
  // because of binary rounding.
  const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * target_fnr + 1e-9));
  return std::min(k, n - 1);
}

double calibrate_theta(std::span<const double> seen_degrees, double target_fnr) {
  if (seen_degrees.empty()) throw InvalidInputError("calibrate_theta: no calibration degrees");
  if (!(target_fnr > 0.0 && target_fnr < 1.0)) {
    throw InvalidInputError("target FNR must lie in (0, 1)");
  }
  std::vector<double> sorted(seen_degrees.begin(), seen_degrees.end());
  for (double d : sorted) {
    if (!std::isfinite(d)) throw InvalidInputError("calibrate_theta: non-finite degree");
  }
  std::sort(sorted.begin(), sorted.end());
  return sorted[flagged_count(sorted.size(), target_fnr)];
}

DdmEnsemble::DdmEnsemble(FoldPartition partition, std::vector<SubDdm> members)
    : partition_(std::move(partition)), members_(std::move(members)) {
  if (partition_.count() < 2) throw InvalidInputError("ensemble needs at least 2 folds");
  if (members_.size() != partition_.count()) {
    throw InvalidInputError("ensemble has " + std::to_string(members_.size()) +
                            " sub-DDMs for " + std::to_string(partition_.count()) + " folds");
  }
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (members_[i].fold() != i) throw InvalidInputError("sub-DDMs must be ordered by fold");
    if (members_[i].input_dim() != members_[0].input_dim()) {
      throw ShapeError("sub-DDMs disagree on input dimension");
    }
  }
}

double DdmEnsemble::theta() const {
  if (!theta_) throw StateError("ensemble is not calibrated");
  return *theta_;
}

void DdmEnsemble::set_theta(double theta) {
  if (!std::isfinite(theta)) throw InvalidInputError("theta must be finite");
  theta_ = theta;
}

std::vector<double> DdmEnsemble::confidences(std::span<const double> pooled) const {
  std::vector<double> p;
  p.reserve(members_.size());
  for (const auto& m : members_) p.push_back(confidence(m, pooled));
  return p;
}

double DdmEnsemble::degree(std::span<const double> pooled) const {
  return disagreement(confidences(pooled));
}

Domain detect(const DdmEnsemble& ensemble, std::span<const double> pooled) {
  const double theta = ensemble.theta();
  return ensemble.degree(pooled) < theta ? Domain::Unseen : Domain::Seen;
}

Domain detect(const DdmEnsemble& ensemble, const FeatureMap& map) {
  return detect(ensemble, pooled_features(map));
}

}  // namespace dzsl
