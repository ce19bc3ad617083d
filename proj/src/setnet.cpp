#include "dzsl/setnet.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "dzsl/diffmath.hpp"
#include "dzsl/error.hpp"

namespace dzsl {
namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// [H, W, K] <-> [K, H, W]
Tensor cells_last_to_heads_first(const Tensor& hwk) {
  const std::size_t h = hwk.dim(0), w = hwk.dim(1), k = hwk.dim(2);
  Tensor out({k, h, w});
  for (std::size_t t = 0; t < h * w; ++t) {
    for (std::size_t j = 0; j < k; ++j) out[j * h * w + t] = hwk[t * k + j];
  }
  return out;
}

Tensor heads_first_to_cells_last(const Tensor& khw) {
  const std::size_t k = khw.dim(0), h = khw.dim(1), w = khw.dim(2);
  Tensor out({h, w, k});
  for (std::size_t t = 0; t < h * w; ++t) {
    for (std::size_t j = 0; j < k; ++j) out[t * k + j] = khw[j * h * w + t];
  }
  return out;
}

struct AttentionForward {
  Tensor hidden_pre;  // [H, W, C_h]
  Tensor hidden;      // relu(hidden_pre)
  Tensor attention;   // [K, H, W]
};

AttentionForward forward_attention(const SetNetModel& model, const FeatureMap& map) {
  const auto& stack = model.attention();
  if (map.channels() != stack.input_channels()) {
    throw ShapeError("feature map has " + std::to_string(map.channels()) +
                     " channels, attention stack expects " +
                     std::to_string(stack.input_channels()));
  }
  AttentionForward f;
  f.hidden_pre = conv1x1(map.tensor(), stack.w1, stack.b1);
  f.hidden = relu(f.hidden_pre);
  f.attention = spatial_softmax(cells_last_to_heads_first(conv1x1(f.hidden, stack.w2, stack.b2)));
  return f;
}

void require_attention_shape(const Tensor& attention) {
  if (attention.rank() != 3) {
    throw ShapeError("attention must be [K, H, W], got " + shape_string(attention.shape()));
  }
  if (attention.dim(0) == 0) throw InvalidInputError("attention has zero heads");
}

std::size_t label_index(const SemanticTable& table, ClassId y) {
  auto idx = table.index_of(y);
  if (!idx) throw IndexError("class id " + std::to_string(y) + " not in semantic table");
  return *idx;
}

}  // namespace

SetNetModel::SetNetModel(AttentionStack attention, ProjectorEnsemble projectors, double lambda,
                         int diversity_sign)
    : attention_(std::move(attention)),
      projectors_(std::move(projectors)),
      lambda_(lambda),
      diversity_sign_(diversity_sign) {
  if (attention_.w1.rank() != 2 || attention_.b1.rank() != 1 || attention_.w2.rank() != 2 ||
      attention_.b2.rank() != 1) {
    throw ShapeError("attention stack tensors have the wrong rank");
  }
  const std::size_t c = attention_.w1.dim(0), ch = attention_.w1.dim(1), k = attention_.w2.dim(1);
  if (c == 0 || ch == 0 || k == 0) throw InvalidInputError("attention stack dimensions must be >= 1");
  if (attention_.b1.dim(0) != ch || attention_.w2.dim(0) != ch || attention_.b2.dim(0) != k) {
    throw ShapeError("attention stack tensors disagree on their dimensions");
  }
  if (projectors_.weights.size() != k || projectors_.biases.size() != k) {
    throw ShapeError("attention stack has " + std::to_string(k) + " heads but the ensemble has " +
                     std::to_string(projectors_.weights.size()) + " projectors");
  }
  for (std::size_t i = 0; i < k; ++i) {
    const auto& w = projectors_.weights[i];
    const auto& b = projectors_.biases[i];
    if (w.rank() != 2 || w.dim(0) != c || b.rank() != 1 || b.dim(0) != w.dim(1) ||
        w.dim(1) != projectors_.weights[0].dim(1)) {
      throw ShapeError("projector " + std::to_string(i) + " has inconsistent shape");
    }
  }
  if (!(lambda_ >= 0.0) || !std::isfinite(lambda_)) throw InvalidInputError("lambda must be >= 0");
  if (diversity_sign_ != 1 && diversity_sign_ != -1) {
    throw InvalidInputError("diversity_sign must be +1 or -1");
  }
}

SetNetModel SetNetModel::initialize(const SetNetShape& shape, double lambda, int diversity_sign,
                                    std::uint64_t seed) {
  if (shape.channels == 0 || shape.hidden_channels == 0 || shape.heads == 0 ||
      shape.semantic_dim == 0) {
    throw InvalidInputError("SetNet dimensions must all be >= 1");
  }
  std::mt19937_64 rng(seed);
  const double b_in = 1.0 / std::sqrt(static_cast<double>(shape.channels));
  const double b_hid = 1.0 / std::sqrt(static_cast<double>(shape.hidden_channels));
  AttentionStack stack;
  stack.w1 = uniform_tensor({shape.channels, shape.hidden_channels}, b_in, rng);
  stack.b1 = uniform_tensor({shape.hidden_channels}, b_in, rng);
  stack.w2 = uniform_tensor({shape.hidden_channels, shape.heads}, b_hid, rng);
  stack.b2 = uniform_tensor({shape.heads}, b_hid, rng);
  ProjectorEnsemble ens;
  for (std::size_t k = 0; k < shape.heads; ++k) {
    ens.weights.push_back(uniform_tensor({shape.channels, shape.semantic_dim}, b_in, rng));
    ens.biases.push_back(uniform_tensor({shape.semantic_dim}, b_in, rng));
  }
  return SetNetModel(std::move(stack), std::move(ens), lambda, diversity_sign);
}

ParamRefs SetNetModel::parameters() {
  ParamRefs refs{{"attention.w1", &attention_.w1},
                 {"attention.b1", &attention_.b1},
                 {"attention.w2", &attention_.w2},
                 {"attention.b2", &attention_.b2}};
  for (std::size_t k = 0; k < projectors_.size(); ++k) {
    refs.emplace_back("projector." + std::to_string(k) + ".weight", &projectors_.weights[k]);
    refs.emplace_back("projector." + std::to_string(k) + ".bias", &projectors_.biases[k]);
  }
  return refs;
}

ConstParamRefs SetNetModel::parameters() const {
  ConstParamRefs out;
  for (const auto& [name, t] : const_cast<SetNetModel*>(this)->parameters()) {
    out.emplace_back(name, t);
  }
  return out;
}

Tensor attention_maps(const SetNetModel& model, const FeatureMap& map) {
  return forward_attention(model, map).attention;
}

Tensor attentive_features(const FeatureMap& map, const Tensor& attention) {
  require_attention_shape(attention);
  if (attention.dim(1) != map.height() || attention.dim(2) != map.width()) {
    throw ShapeError("attention " + shape_string(attention.shape()) + " does not match a " +
                     std::to_string(map.height()) + "x" + std::to_string(map.width()) +
                     " feature map");
  }
  const std::size_t k = attention.dim(0), cells = map.cells();
  return matmul(attention.reshaped({k, cells}), map.tensor().reshaped({cells, map.channels()}));
}

double diversity_loss(const Tensor& attention) {
  require_attention_shape(attention);
  const std::size_t k = attention.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      total += 2.0 * hellinger_sq(attention.slice(i), attention.slice(j));
    }
  }
  return total;
}

Tensor diversity_loss_grad(const Tensor& attention) {
  require_attention_shape(attention);
  const std::size_t k = attention.dim(0);
  Tensor grad(attention.shape());
  for (std::size_t i = 0; i < k; ++i) {
    auto gi = grad.slice(i);
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      // Both ordered pairs (i, j) and (j, i) depend on a_i.
      const auto g = hellinger_sq_grad(attention.slice(i), attention.slice(j));
      for (std::size_t t = 0; t < g.size(); ++t) gi[t] += 2.0 * g[t];
    }
  }
  return grad;
}

Tensor project(const SetNetModel& model, const Tensor& features) {
  const auto& ens = model.projectors();
  if (features.rank() != 2 || features.dim(0) != ens.size() ||
      features.dim(1) != ens.visual_dim()) {
    throw ShapeError("attentive features " + shape_string(features.shape()) +
                     " do not match the projector ensemble");
  }
  const std::size_t s = ens.semantic_dim();
  Tensor out({ens.size(), s});
  for (std::size_t k = 0; k < ens.size(); ++k) {
    Tensor row = matmul(Tensor({1, features.dim(1)}, std::vector<double>(features.slice(k).begin(),
                                                                         features.slice(k).end())),
                        ens.weights[k]);
    auto dst = out.slice(k);
    for (std::size_t j = 0; j < s; ++j) dst[j] = row[j] + ens.biases[k][j];
  }
  return out;
}

namespace {

std::vector<double> dot_with_table(const Tensor& projected, const SemanticTable& table,
                                   double factor) {
  if (table.dim() != projected.dim(1)) {
    throw ShapeError("semantic dimension " + std::to_string(table.dim()) +
                     " does not match projector output " + std::to_string(projected.dim(1)));
  }
  std::vector<double> scores(table.size(), 0.0);
  for (std::size_t d = 0; d < table.size(); ++d) {
    auto e = table.row(d);
    double acc = 0.0;
    for (std::size_t k = 0; k < projected.dim(0); ++k) {
      auto p = projected.slice(k);
      for (std::size_t j = 0; j < e.size(); ++j) acc += p[j] * e[j];
    }
    scores[d] = factor * acc;
  }
  return scores;
}

}  // namespace

std::vector<double> ensemble_logits(const SetNetModel& model, const Tensor& features,
                                    const SemanticTable& table) {
  const Tensor projected = project(model, features);
  return dot_with_table(projected, table, 1.0 / static_cast<double>(projected.dim(0)));
}

std::vector<double> class_scores(const SetNetModel& model, const FeatureMap& map,
                                 const SemanticTable& table) {
  const Tensor features = attentive_features(map, attention_maps(model, map));
  return dot_with_table(project(model, features), table, 1.0);
}

ClassId predict(const SetNetModel& model, const FeatureMap& map, const SemanticTable& table) {
  if (table.empty()) throw InvalidInputError("predict: empty semantic table");
  const auto scores = class_scores(model, map, table);
  std::size_t best = 0;
  for (std::size_t d = 1; d < scores.size(); ++d) {
    if (scores[d] > scores[best] ||
        (scores[d] == scores[best] && table.class_ids()[d] < table.class_ids()[best])) {
      best = d;
    }
  }
  return table.class_ids()[best];
}

SetNetLoss total_loss(const SetNetModel& model, const FeatureMap& map, ClassId y,
                      const SemanticTable& table) {
  const std::size_t label = label_index(table, y);
  const auto fwd = forward_attention(model, map);
  const Tensor features = attentive_features(map, fwd.attention);
  const Tensor projected = project(model, features);
  const std::size_t heads = model.heads();
  const double inv_k = 1.0 / static_cast<double>(heads);
  const auto logits = dot_with_table(projected, table, inv_k);

  SetNetLoss out;
  out.classification = cross_entropy_from_logits(logits, label);
  out.diversity = diversity_loss(fwd.attention);
  const double div_weight = model.diversity_sign() * model.lambda();
  out.total = out.classification + div_weight * out.diversity;

  // Classification branch: logits -> projections -> projector params and
  // attentive features.
  const auto dlogits = cross_entropy_grad(logits, label);
  const auto& ens = model.projectors();
  const std::size_t s = ens.semantic_dim(), v = ens.visual_dim();
  Tensor dprojected({heads, s});
  for (std::size_t d = 0; d < table.size(); ++d) {
    auto e = table.row(d);
    for (std::size_t k = 0; k < heads; ++k) {
      for (std::size_t j = 0; j < s; ++j) dprojected.at(k, j) += inv_k * dlogits[d] * e[j];
    }
  }
  Tensor dfeatures({heads, v});
  for (std::size_t k = 0; k < heads; ++k) {
    const Tensor mk({1, v}, std::vector<double>(features.slice(k).begin(), features.slice(k).end()));
    const Tensor gk({1, s}, std::vector<double>(dprojected.slice(k).begin(), dprojected.slice(k).end()));
    auto mg = matmul_backward(mk, ens.weights[k], gk);
    std::copy(mg.a.values().begin(), mg.a.values().end(), dfeatures.slice(k).begin());
    out.gradients["projector." + std::to_string(k) + ".weight"] = std::move(mg.b);
    out.gradients["projector." + std::to_string(k) + ".bias"] = gk.reshaped({s});
  }

  // Attention gradient: pooling branch plus the weighted diversity term.
  const std::size_t cells = map.cells();
  const Tensor flat_map = map.tensor().reshaped({cells, map.channels()});
  Tensor dattention =
      matmul_backward(fwd.attention.reshaped({heads, cells}), flat_map, dfeatures).a.reshaped(
          fwd.attention.shape());
  if (div_weight != 0.0) {
    dattention = add(dattention, scale(diversity_loss_grad(fwd.attention), div_weight));
  }

  const auto& stack = model.attention();
  const Tensor dlogit_maps =
      heads_first_to_cells_last(spatial_softmax_backward(fwd.attention, dattention));
  auto g2 = conv1x1_backward(fwd.hidden, stack.w2, dlogit_maps);
  auto g1 = conv1x1_backward(map.tensor(), stack.w1, relu_backward(fwd.hidden_pre, g2.x));
  out.gradients["attention.w1"] = std::move(g1.weight);
  out.gradients["attention.b1"] = std::move(g1.bias);
  out.gradients["attention.w2"] = std::move(g2.weight);
  out.gradients["attention.b2"] = std::move(g2.bias);
  return out;
}

void write_attention_csv(std::ostream& out, const Tensor& attention) {
  require_attention_shape(attention);
  const std::size_t k = attention.dim(0), h = attention.dim(1), w = attention.dim(2);
  out << std::setprecision(17);
  for (std::size_t head = 0; head < k; ++head) {
    if (head) out << '\n';
    out << "# head " << head << '\n';
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        if (c) out << ',';
        out << attention.at(head, r, c);
      }
      out << '\n';
    }
  }
}

void export_attention(const Tensor& attention, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.imbue(std::locale::classic());
  write_attention_csv(out, attention);
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Tensor parse_attention_csv(std::istream& in) {
  in.imbue(std::locale::classic());
  std::vector<std::vector<std::vector<double>>> blocks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# head", 0) == 0) {
      blocks.emplace_back();
      continue;
    }
    if (blocks.empty()) throw InvalidInputError("attention CSV: data before the first head marker");
    std::vector<double> row;
    std::istringstream cells(line);
    cells.imbue(std::locale::classic());
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      std::istringstream num(cell);
      num.imbue(std::locale::classic());
      double v = 0.0;
      if (!(num >> v)) throw InvalidInputError("attention CSV: bad number '" + cell + "'");
      row.push_back(v);
    }
    blocks.back().push_back(std::move(row));
  }
  if (blocks.empty() || blocks[0].empty()) throw InvalidInputError("attention CSV: no blocks");
  const std::size_t h = blocks[0].size(), w = blocks[0][0].size();
  Tensor out({blocks.size(), h, w});
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    if (blocks[k].size() != h) throw ShapeError("attention CSV: ragged blocks");
    for (std::size_t r = 0; r < h; ++r) {
      if (blocks[k][r].size() != w) throw ShapeError("attention CSV: ragged rows");
      for (std::size_t c = 0; c < w; ++c) out.at(k, r, c) = blocks[k][r][c];
    }
  }
  return out;
}

}  // namespace dzsl
