#pragma once

// Random instance builders and straight-line reference implementations used
// by the unit tests and the acceptance suite. The references deliberately
// avoid the library's own helpers so they can serve as independent checks.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dzsl/dataio.hpp"
#include "dzsl/diffmath.hpp"
#include "dzsl/feature_map.hpp"
#include "dzsl/id3m.hpp"
#include "dzsl/semantic_table.hpp"
#include "dzsl/setnet.hpp"
#include "dzsl/tensor.hpp"

namespace dzsl::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

// Strictly positive point on the simplex.
inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (double& x : p) {
    x = std::exp(uniform(rng, -2.0, 2.0));
    sum += x;
  }
  for (double& x : p) x /= sum;
  return p;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), random_vector(rng, n, lo, hi));
}

inline FeatureMap random_map(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  return FeatureMap(random_tensor(rng, {h, w, c}));
}

// Attention tensor [K, H, W] whose head slices are random simplex points.
inline Tensor random_attention(Rng& rng, std::size_t k, std::size_t h, std::size_t w) {
  Tensor a({k, h, w});
  for (std::size_t i = 0; i < k; ++i) {
    const auto p = random_simplex(rng, h * w);
    std::copy(p.begin(), p.end(), a.slice(i).begin());
  }
  return a;
}

inline SemanticTable random_table(Rng& rng, std::size_t d, std::size_t s, ClassId first_id = 0) {
  std::vector<ClassId> ids(d);
  for (std::size_t i = 0; i < d; ++i) ids[i] = first_id + static_cast<ClassId>(i);
  return SemanticTable::normalized(std::move(ids), random_tensor(rng, {d, s}));
}

inline SetNetModel random_model(std::uint64_t seed, std::size_t c, std::size_t ch, std::size_t k,
                                std::size_t s, double lambda, int sign = -1) {
  return SetNetModel::initialize(SetNetShape{c, ch, k, s}, lambda, sign, seed);
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dzsl_test_" + std::to_string(rd()) + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Reference implementations

namespace ref {

inline std::vector<double> softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = v > m ? v : m;
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] - m);
    sum += e[i];
  }
  for (double& v : e) v /= sum;
  return e;
}

inline double hellinger_sq(const std::vector<double>& p, const std::vector<double>& q) {
  double bc = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) bc += std::sqrt(p[t]) * std::sqrt(q[t]);
  return std::clamp(1.0 - bc, 0.0, 1.0);
}

inline std::vector<double> head(const Tensor& a, std::size_t k) {
  const std::size_t t = a.dim(1) * a.dim(2);
  return std::vector<double>(a.storage().begin() + static_cast<std::ptrdiff_t>(k * t),
                             a.storage().begin() + static_cast<std::ptrdiff_t>((k + 1) * t));
}

inline double diversity_loss(const Tensor& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(0); ++j) {
      if (i != j) total += hellinger_sq(head(a, i), head(a, j));
    }
  }
  return total;
}

// Straight-line forward pass of the attention stack.
inline Tensor attention_maps(const SetNetModel& model, const FeatureMap& map) {
  const auto& st = model.attention();
  const std::size_t h = map.height(), w = map.width(), c = map.channels();
  const std::size_t ch = st.hidden_channels(), k = st.heads();
  Tensor logits({k, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::vector<double> hidden(ch);
      for (std::size_t j = 0; j < ch; ++j) {
        double s = st.b1[j];
        for (std::size_t i = 0; i < c; ++i) s += map.at(y, x, i) * st.w1.at(i, j);
        hidden[j] = s > 0.0 ? s : 0.0;
      }
      for (std::size_t kk = 0; kk < k; ++kk) {
        double s = st.b2[kk];
        for (std::size_t j = 0; j < ch; ++j) s += hidden[j] * st.w2.at(j, kk);
        logits.at(kk, y, x) = s;
      }
    }
  }
  Tensor out({k, h, w});
  for (std::size_t kk = 0; kk < k; ++kk) {
    const auto p = softmax(head(logits, kk));
    std::copy(p.begin(), p.end(), out.slice(kk).begin());
  }
  return out;
}

inline Tensor attentive_features(const FeatureMap& map, const Tensor& a) {
  Tensor m({a.dim(0), map.channels()});
  for (std::size_t k = 0; k < a.dim(0); ++k) {
    for (std::size_t y = 0; y < map.height(); ++y) {
      for (std::size_t x = 0; x < map.width(); ++x) {
        for (std::size_t c = 0; c < map.channels(); ++c) m.at(k, c) += a.at(k, y, x) * map.at(y, x, c);
      }
    }
  }
  return m;
}

inline std::vector<double> ensemble_logits(const SetNetModel& model, const Tensor& m,
                                           const SemanticTable& table) {
  const auto& pr = model.projectors();
  const std::size_t k = pr.size(), v = pr.visual_dim(), s = pr.semantic_dim();
  std::vector<double> out(table.size(), 0.0);
  for (std::size_t d = 0; d < table.size(); ++d) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      for (std::size_t j = 0; j < s; ++j) {
        double proj = pr.biases[kk][j];
        for (std::size_t i = 0; i < v; ++i) proj += m.at(kk, i) * pr.weights[kk].at(i, j);
        out[d] += proj * table.vectors().at(d, j);
      }
    }
    out[d] /= static_cast<double>(k);
  }
  return out;
}

inline std::vector<double> subddm_proba(const SubDdm& ddm, const std::vector<double>& x) {
  const auto params = ddm.parameters();
  const Tensor& w1 = *params[0].second;
  const Tensor& b1 = *params[1].second;
  const Tensor& w2 = *params[2].second;
  const Tensor& b2 = *params[3].second;
  std::vector<double> hidden(w1.dim(1));
  for (std::size_t j = 0; j < hidden.size(); ++j) {
    double s = b1[j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w1.at(i, j);
    hidden[j] = std::max(0.0, s);
  }
  std::vector<double> z(w2.dim(1));
  for (std::size_t o = 0; o < z.size(); ++o) {
    double s = b2[o];
    for (std::size_t j = 0; j < hidden.size(); ++j) s += hidden[j] * w2.at(j, o);
    z[o] = s;
  }
  return softmax(z);
}

inline double confidence(const SubDdm& ddm, const std::vector<double>& x) {
  const auto p = subddm_proba(ddm, x);
  double best = 0.0, h = 0.0;
  for (double v : p) {
    best = std::max(best, v);
    if (v > 0.0) h -= v * std::log(v);
  }
  return best - h;
}

inline double disagreement(std::vector<double> p) {
  std::sort(p.begin(), p.end());
  double rest = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) rest += p[i];
  return rest / static_cast<double>(p.size() - 1) - p[0];
}

inline double per_class_top1(const std::vector<ClassId>& preds, const std::vector<ClassId>& labels,
                             const std::vector<ClassId>& classes) {
  double sum = 0.0;
  int used = 0;
  for (ClassId c : classes) {
    int total = 0, hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      ++total;
      if (preds[i] == c) ++hit;
    }
    if (total == 0) continue;
    sum += static_cast<double>(hit) / total;
    ++used;
  }
  return sum / used;
}

// Sweeps every seen degree as a candidate threshold and keeps the one whose
// strict rule flags floor(n * fnr) seen points while being a data value.
inline std::vector<double> tnr_at_fnr(const std::vector<double>& seen, const std::vector<double>& unseen,
                                      const std::vector<double>& grid) {
  std::vector<double> out;
  const std::size_t n = seen.size();
  for (double f : grid) {
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
    double theta = 0.0;
    for (double cand : seen) {
      std::size_t below = 0, at_or_below = 0;
      for (double s : seen) {
        below += s < cand;
        at_or_below += s <= cand;
      }
      if (below <= k && at_or_below >= std::min(k + 1, n)) {
        theta = cand;
        break;
      }
    }
    std::size_t caught = 0;
    for (double u : unseen) caught += u < theta;
    out.push_back(static_cast<double>(caught) / static_cast<double>(unseen.size()));
  }
  return out;
}


// Loss values evaluated in scalar type T, independent of the library's
// forward pass. With T = long double these serve as the high-precision side
// of finite-difference checks.
template <class T>
T log_softmax_at(const std::vector<T>& z, std::size_t i) {
  T m = z[0];
  for (T v : z) m = v > m ? v : m;
  T sum = 0;
  for (T v : z) sum += std::exp(v - m);
  return z[i] - m - std::log(sum);
}

template <class T>
T setnet_total_loss(const SetNetModel& model, const FeatureMap& map, ClassId y, const SemanticTable& table) {
  const auto& st = model.attention();
  const auto& pr = model.projectors();
  const std::size_t cells = map.cells(), c = map.channels(), ch = st.hidden_channels(), k = st.heads();
  const std::size_t s = pr.semantic_dim();
  std::vector<std::vector<T>> att(k, std::vector<T>(cells));
  for (std::size_t t = 0; t < cells; ++t) {
    const auto x = map.cell(t);
    std::vector<T> hidden(ch);
    for (std::size_t j = 0; j < ch; ++j) {
      T v = st.b1[j];
      for (std::size_t i = 0; i < c; ++i) v += T(x[i]) * T(st.w1.at(i, j));
      hidden[j] = v > 0 ? v : T(0);
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      T v = st.b2[kk];
      for (std::size_t j = 0; j < ch; ++j) v += hidden[j] * T(st.w2.at(j, kk));
      att[kk][t] = v;
    }
  }
  for (auto& a : att) {
    std::vector<T> z = a;
    for (std::size_t t = 0; t < cells; ++t) a[t] = std::exp(log_softmax_at(z, t));
  }
  std::vector<T> logits(table.size(), T(0));
  for (std::size_t kk = 0; kk < k; ++kk) {
    std::vector<T> m(c, T(0));
    for (std::size_t t = 0; t < cells; ++t) {
      const auto x = map.cell(t);
      for (std::size_t i = 0; i < c; ++i) m[i] += att[kk][t] * T(x[i]);
    }
    for (std::size_t j = 0; j < s; ++j) {
      T proj = pr.biases[kk][j];
      for (std::size_t i = 0; i < c; ++i) proj += m[i] * T(pr.weights[kk].at(i, j));
      for (std::size_t d = 0; d < table.size(); ++d) logits[d] += proj * T(table.vectors().at(d, j));
    }
  }
  for (T& v : logits) v /= T(k);
  const T cls = -log_softmax_at(logits, *table.index_of(y));
  T div = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      T bc = 0;
      for (std::size_t t = 0; t < cells; ++t) bc += std::sqrt(att[i][t] * att[j][t]);
      div += T(1) - bc;
    }
  }
  return cls + T(model.diversity_sign()) * T(model.lambda()) * div;
}

template <class T>
std::vector<T> subddm_logits(const SubDdm& ddm, std::span<const double> x) {
  const auto params = ddm.parameters();
  const Tensor& w1 = *params[0].second;
  const Tensor& b1 = *params[1].second;
  const Tensor& w2 = *params[2].second;
  const Tensor& b2 = *params[3].second;
  std::vector<T> hidden(w1.dim(1));
  for (std::size_t j = 0; j < hidden.size(); ++j) {
    T v = b1[j];
    for (std::size_t i = 0; i < x.size(); ++i) v += T(x[i]) * T(w1.at(i, j));
    hidden[j] = v > 0 ? v : T(0);
  }
  std::vector<T> z(w2.dim(1));
  for (std::size_t o = 0; o < z.size(); ++o) {
    T v = b2[o];
    for (std::size_t j = 0; j < hidden.size(); ++j) v += hidden[j] * T(w2.at(j, o));
    z[o] = v;
  }
  return z;
}

template <class T>
T subddm_loss_value(const SubDdm& ddm, const std::vector<std::vector<double>>& id_x,
                    const std::vector<ClassId>& id_y, const std::vector<std::vector<double>>& ood_x) {
  T total = 0;
  if (!id_x.empty()) {
    T ce = 0;
    for (std::size_t n = 0; n < id_x.size(); ++n) {
      ce -= log_softmax_at(subddm_logits<T>(ddm, id_x[n]), *ddm.label_index(id_y[n]));
    }
    total += ce / T(id_x.size());
  }
  if (!ood_x.empty()) {
    T kl = 0;
    for (const auto& x : ood_x) {
      const auto z = subddm_logits<T>(ddm, x);
      const T c = T(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        const T lp = log_softmax_at(z, i);
        kl += std::exp(lp) * (lp + std::log(c));
      }
    }
    total += kl / T(ood_x.size());
  }
  return total;
}

}  // namespace ref

// grad_check inputs whose values come from the long-double references minus
// their value at the starting point, and whose gradients are the library's
// analytic ones. Subtracting the constant leaves the gradient unchanged but
// keeps the small finite differences clear of double rounding in the loss.
inline DifferentiableLoss precise_setnet_loss_fn(const SetNetModel& model, const FeatureMap& map, ClassId y,
                                                 const SemanticTable& table) {
  const long double base = ref::setnet_total_loss<long double>(model, map, y, table);
  return [m = model, map, y, table, base](std::span<const double> flat) mutable {
    assign(m.parameters(), flat);
    const SetNetLoss l = total_loss(m, map, y, table);
    const SetNetModel& cm = m;
    const long double v = ref::setnet_total_loss<long double>(cm, map, y, table) - base;
    return LossEval{static_cast<double>(v), flatten(l.gradients, cm.parameters())};
  };
}

inline DifferentiableLoss precise_subddm_loss_fn(const SubDdm& ddm, std::vector<std::vector<double>> id_x,
                                                 std::vector<ClassId> id_y,
                                                 std::vector<std::vector<double>> ood_x) {
  const long double base = ref::subddm_loss_value<long double>(ddm, id_x, id_y, ood_x);
  return [d = ddm, id_x, id_y, ood_x, base](std::span<const double> flat) mutable {
    assign(d.parameters(), flat);
    const SubDdmLoss l = subddm_loss(d, id_x, id_y, ood_x);
    const SubDdm& cd = d;
    const long double v = ref::subddm_loss_value<long double>(cd, id_x, id_y, ood_x) - base;
    return LossEval{static_cast<double>(v), flatten(l.gradients, cd.parameters())};
  };
}

}  // namespace dzsl::testing
