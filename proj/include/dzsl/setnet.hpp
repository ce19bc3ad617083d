#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "dzsl/feature_map.hpp"
#include "dzsl/semantic_table.hpp"
#include "dzsl/tensor.hpp"

namespace dzsl {

// Two 1x1 convolutions with a ReLU between them. Output channel k is the
// logit map of attention head k.
struct AttentionStack {
  Tensor w1;  // [C, C_h]
  Tensor b1;  // [C_h]
  Tensor w2;  // [C_h, K]
  Tensor b2;  // [K]

  std::size_t input_channels() const { return w1.dim(0); }
  std::size_t hidden_channels() const { return w1.dim(1); }
  std::size_t heads() const { return w2.dim(1); }
};

// K independent affine visual-to-semantic maps.
struct ProjectorEnsemble {
  std::vector<Tensor> weights;  // K x [V, S]
  std::vector<Tensor> biases;   // K x [S]

  std::size_t size() const { return weights.size(); }
  std::size_t visual_dim() const { return weights.at(0).dim(0); }
  std::size_t semantic_dim() const { return weights.at(0).dim(1); }
};

struct SetNetShape {
  std::size_t channels = 32;
  std::size_t hidden_channels = 16;
  std::size_t heads = 4;
  std::size_t semantic_dim = 16;
};

class SetNetModel {
 public:
  SetNetModel() = default;
  // Validates that the stack and the ensemble agree on K and V, and that
  // diversity_sign is +1 or -1.
  SetNetModel(AttentionStack attention, ProjectorEnsemble projectors, double lambda,
              int diversity_sign = -1);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
  static SetNetModel initialize(const SetNetShape& shape, double lambda, int diversity_sign,
                                std::uint64_t seed);

  const AttentionStack& attention() const noexcept { return attention_; }
  const ProjectorEnsemble& projectors() const noexcept { return projectors_; }
  std::size_t heads() const noexcept { return projectors_.size(); }
  std::size_t channels() const { return attention_.input_channels(); }
  std::size_t semantic_dim() const { return projectors_.semantic_dim(); }
  double lambda() const noexcept { return lambda_; }
  int diversity_sign() const noexcept { return diversity_sign_; }

  // Parameter names: attention.{w1,b1,w2,b2}, projector.<k>.{weight,bias}.
  ParamRefs parameters();
  ConstParamRefs parameters() const;

 private:
  AttentionStack attention_;
  ProjectorEnsemble projectors_;
  double lambda_ = 0.2;
  int diversity_sign_ = -1;
};

// [K, H, W] attention maps; each head slice sums to one.
Tensor attention_maps(const SetNetModel& model, const FeatureMap& map);

// m_k[c] = sum_{h,w} A[k,h,w] M[h,w,c]  ->  [K, C].
Tensor attentive_features(const FeatureMap& map, const Tensor& attention);

// Sum over ordered pairs i != j of hellinger_sq(a_i, a_j).
double diversity_loss(const Tensor& attention);
// Gradient of diversity_loss w.r.t. the attention tensor.
Tensor diversity_loss_grad(const Tensor& attention);

// Per-head projections Q_k(m_k) -> [K, S].
Tensor project(const SetNetModel& model, const Tensor& features);

// logits[d] = (1/K) sum_k Q_k(m_k) . e_d.
std::vector<double> ensemble_logits(const SetNetModel& model, const Tensor& features,
                                    const SemanticTable& table);

struct SetNetLoss {
  double total = 0.0;
  double classification = 0.0;
  double diversity = 0.0;
  GradientSet gradients;
};

// L_cls + sign * lambda * L_div with L_cls the cross entropy of
// ensemble_logits against y over `table`. Gradients cover every parameter.
SetNetLoss total_loss(const SetNetModel& model, const FeatureMap& map, ClassId y,
                      const SemanticTable& table);

// argmax_d sum_k Q_k(m_k) . e_d; ties go to the smallest class id.
ClassId predict(const SetNetModel& model, const FeatureMap& map, const SemanticTable& table);

// Per-class scores used by predict (sum over heads, not mean).
std::vector<double> class_scores(const SetNetModel& model, const FeatureMap& map,
                                 const SemanticTable& table);

// One block per head: a "# head <k>" line, then H rows of W comma-separated
// values at full precision. Blocks are separated by an empty line.
void write_attention_csv(std::ostream& out, const Tensor& attention);
void export_attention(const Tensor& attention, const std::filesystem::path& path);
Tensor parse_attention_csv(std::istream& in);

}  // namespace dzsl
