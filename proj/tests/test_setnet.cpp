#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dzsl/error.hpp"
#include "dzsl/setnet.hpp"
#include "support.hpp"

using namespace dzsl;
using namespace dzsl::testing;

namespace {

// Identity projector, zero biases: K = 1, V = S.
SetNetModel identity_model(std::size_t c) {
  AttentionStack st{Tensor({c, 2}), Tensor({2}), Tensor({2, 1}), Tensor({1})};
  Tensor eye({c, c});
  for (std::size_t i = 0; i < c; ++i) eye.at(i, i) = 1.0;
  ProjectorEnsemble pr{{eye}, {Tensor({c})}};
  return SetNetModel(st, pr, 0.0);
}

SemanticTable basis_table(std::size_t s) {
  Tensor e({s, s});
  std::vector<ClassId> ids(s);
  for (std::size_t i = 0; i < s; ++i) {
    e.at(i, i) = 1.0;
    ids[i] = static_cast<ClassId>(10 + i);
  }
  return SemanticTable(ids, e);
}

}  // namespace

TEST_CASE("model construction validates head counts and sign") {
  const SetNetModel m = random_model(1, 8, 4, 3, 5, 0.2);
  CHECK(m.heads() == 3);
  CHECK(m.channels() == 8);
  CHECK(m.semantic_dim() == 5);
  ProjectorEnsemble two = m.projectors();
  two.weights.pop_back();
  two.biases.pop_back();
  CHECK_THROWS_AS(SetNetModel(m.attention(), two, 0.2), ShapeError);
  CHECK_THROWS_AS(SetNetModel(m.attention(), m.projectors(), 0.2, 0), InvalidInputError);
  CHECK_THROWS_AS(SetNetModel(m.attention(), m.projectors(), -1.0), InvalidInputError);
}

TEST_CASE("initialization is seeded and bounded by 1/sqrt(fan_in)") {
  const SetNetModel a = random_model(42, 8, 4, 3, 5, 0.2), b = random_model(42, 8, 4, 3, 5, 0.2);
  const SetNetModel c = random_model(43, 8, 4, 3, 5, 0.2);
  CHECK(flatten(a.parameters()) == flatten(b.parameters()));
  CHECK(flatten(a.parameters()) != flatten(c.parameters()));
  const double bound1 = 1.0 / std::sqrt(8.0), bound2 = 1.0 / std::sqrt(4.0);
  for (double v : a.attention().w1.values()) CHECK(std::abs(v) <= bound1);
  for (double v : a.attention().w2.values()) CHECK(std::abs(v) <= bound2);
  for (const auto& w : a.projectors().weights) {
    for (double v : w.values()) CHECK(std::abs(v) <= bound1);
  }
}

TEST_CASE("attention_maps: uniform for zero input and zero biases") {
  SetNetModel m = random_model(3, 8, 4, 3, 5, 0.2);
  AttentionStack st = m.attention();
  std::fill(st.b1.values().begin(), st.b1.values().end(), 0.0);
  std::fill(st.b2.values().begin(), st.b2.values().end(), 0.0);
  const SetNetModel zb(st, m.projectors(), 0.2);
  const Tensor a = attention_maps(zb, FeatureMap(4, 4, 8));
  for (double v : a.values()) CHECK(std::abs(v - 1.0 / 16.0) < 1e-15);
}

TEST_CASE("attention_maps: normalized and equal to a straight-line reference") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const SetNetModel m = random_model(seed, 8, 6, 3, 5, 0.2);
    const FeatureMap x = FeatureMap(random_tensor(rng, {4, 4, 8}, -5.0, 5.0));
    const Tensor a = attention_maps(m, x), r = ref::attention_maps(m, x);
    for (std::size_t k = 0; k < 3; ++k) {
      double sum = 0.0;
      for (double v : a.slice(k)) {
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - r[i]) < 1e-12);
  }
  const SetNetModel m = random_model(1, 8, 4, 3, 5, 0.2);
  CHECK_THROWS_AS(attention_maps(m, FeatureMap(4, 4, 7)), ShapeError);
}

TEST_CASE("attentive_features: uniform, point mass, reference") {
  Rng rng(9);
  const FeatureMap x = random_map(rng, 3, 4, 5);
  Tensor uni({2, 3, 4}, 1.0 / 12.0);
  const Tensor m = attentive_features(x, uni);
  for (std::size_t c = 0; c < 5; ++c) {
    double mean = 0.0;
    for (std::size_t h = 0; h < 3; ++h) {
      for (std::size_t w = 0; w < 4; ++w) mean += x.at(h, w, c);
    }
    CHECK(std::abs(m.at(0, c) - mean / 12.0) < 1e-15);
  }
  Tensor point({1, 3, 4});
  point.at(0, 2, 1) = 1.0;
  const Tensor mp = attentive_features(x, point);
  for (std::size_t c = 0; c < 5; ++c) CHECK(mp.at(0, c) == x.at(2, 1, c));

  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap y = random_map(rng, 4, 4, 8);
    const Tensor a = random_attention(rng, 3, 4, 4);
    const Tensor got = attentive_features(y, a), want = ref::attentive_features(y, a);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
  CHECK_THROWS_AS(attentive_features(x, Tensor({1, 4, 3}, 1.0 / 12.0)), ShapeError);
}

TEST_CASE("diversity_loss: identical maps, disjoint maps, permutation, reference") {
  Rng rng(4);
  const Tensor a = random_attention(rng, 1, 4, 4);
  Tensor same({3, 4, 4});
  for (std::size_t k = 0; k < 3; ++k) std::copy(a.values().begin(), a.values().end(), same.slice(k).begin());
  CHECK(std::abs(diversity_loss(same)) < 1e-12);

  Tensor disjoint({2, 2, 2});
  disjoint.at(0, 0, 0) = 0.5;
  disjoint.at(0, 0, 1) = 0.5;
  disjoint.at(1, 1, 0) = 0.5;
  disjoint.at(1, 1, 1) = 0.5;
  CHECK(diversity_loss(disjoint) == 2.0);

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng() % 5;
    const Tensor x = random_attention(rng, k, 3, 4);
    const double d = diversity_loss(x);
    CHECK(std::abs(d - ref::diversity_loss(x)) < 1e-12);
    CHECK(d >= 0.0);
    CHECK(d <= static_cast<double>(k * (k - 1)));
    Tensor rev({k, 3, 4});
    for (std::size_t i = 0; i < k; ++i) {
      std::copy(x.slice(k - 1 - i).begin(), x.slice(k - 1 - i).end(), rev.slice(i).begin());
    }
    CHECK(std::abs(diversity_loss(rev) - d) < 1e-12);
  }
  CHECK_THROWS_AS(diversity_loss(Tensor({0, 2, 2})), Error);
}

TEST_CASE("diversity_loss_grad matches finite differences through a softmax") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Tensor z0 = random_tensor(rng, {3, 2, 3});
    auto loss = [](std::span<const double> flat) {
      const Tensor z({3, 2, 3}, std::vector<double>(flat.begin(), flat.end()));
      const Tensor a = spatial_softmax(z);
      return LossEval{diversity_loss(a), spatial_softmax_backward(a, diversity_loss_grad(a)).storage()};
    };
    CHECK(grad_check(loss, z0.values(), 1e-4) <= 1e-4);
  }
}

TEST_CASE("ensemble_logits: identity projector, linearity, reference") {
  const SetNetModel id = identity_model(4);
  const SemanticTable basis = basis_table(4);
  const Tensor m({1, 4}, {0.3, -1.2, 2.5, 0.0});
  const auto l = ensemble_logits(id, m, basis);
  for (std::size_t i = 0; i < 4; ++i) CHECK(l[i] == m[i]);

  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const SetNetModel model = random_model(trial, 6, 3, 2, 5, 0.2);
    const SemanticTable table = random_table(rng, 7, 5);
    const Tensor f = random_tensor(rng, {2, 6}), g = random_tensor(rng, {2, 6});
    const auto got = ensemble_logits(model, f, table), want = ref::ensemble_logits(model, f, table);
    for (std::size_t d = 0; d < 7; ++d) CHECK(std::abs(got[d] - want[d]) < 1e-12);

    // Affine in m: L(f + t g) - L(f) = t (L(f + g) - L(f)).
    const double t = uniform(rng, -2.0, 2.0);
    Tensor ftg = f, fg = f;
    for (std::size_t i = 0; i < f.size(); ++i) {
      ftg[i] += t * g[i];
      fg[i] += g[i];
    }
    const auto a = ensemble_logits(model, ftg, table), b = ensemble_logits(model, fg, table);
    for (std::size_t d = 0; d < 7; ++d) CHECK(std::abs((a[d] - got[d]) - t * (b[d] - got[d])) < 1e-10);
  }
  CHECK_THROWS_AS(ensemble_logits(id, Tensor({1, 3}), basis), ShapeError);
  CHECK_THROWS_AS(ensemble_logits(id, m, basis_table(3)), ShapeError);
}

TEST_CASE("total_loss: regularizer off, identical maps, lambda monotonicity") {
  Rng rng(12);
  const SemanticTable table = random_table(rng, 5, 5);
  const FeatureMap x = random_map(rng, 4, 4, 8);
  const SetNetModel m0 = random_model(5, 8, 4, 3, 5, 0.0);
  const SetNetLoss l0 = total_loss(m0, x, 2, table);
  const auto a = attention_maps(m0, x);
  const double ce = cross_entropy_from_logits(ensemble_logits(m0, attentive_features(x, a), table), 2);
  CHECK(std::abs(l0.total - ce) < 1e-12);
  CHECK(l0.classification == l0.total);

  // Zero attention weights: every head gets the same (uniform) map.
  AttentionStack st = m0.attention();
  std::fill(st.w2.values().begin(), st.w2.values().end(), 0.0);
  std::fill(st.b2.values().begin(), st.b2.values().end(), 0.0);
  const SetNetModel flat(st, m0.projectors(), 0.5);
  const SetNetLoss lf = total_loss(flat, x, 2, table);
  CHECK(std::abs(lf.diversity) < 1e-12);
  CHECK(std::abs(lf.total - lf.classification) < 1e-12);

  double prev = l0.total;
  for (double lambda : {0.1, 0.2, 0.5, 1.0, 2.0}) {
    const SetNetModel m(m0.attention(), m0.projectors(), lambda);
    const SetNetLoss l = total_loss(m, x, 2, table);
    CHECK(l.classification == doctest::Approx(l0.classification).epsilon(1e-14));
    CHECK(std::abs(l.total - (l.classification - lambda * l.diversity)) < 1e-12);
    CHECK(l.total <= prev);
    prev = l.total;
  }
  const SetNetModel plus(m0.attention(), m0.projectors(), 0.3, +1);
  const SetNetLoss lp = total_loss(plus, x, 2, table);
  CHECK(std::abs(lp.total - (lp.classification + 0.3 * lp.diversity)) < 1e-12);

  CHECK_THROWS_AS(total_loss(m0, x, 99, table), IndexError);
}

TEST_CASE("total_loss gradient covers every parameter and passes grad_check at 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    const SetNetModel m = random_model(seed, 8, 6, 3, 5, 0.2, seed % 2 ? 1 : -1);
    const SemanticTable table = random_table(rng, 5, 5);
    const FeatureMap x = random_map(rng, 4, 4, 8);
    const ClassId y = static_cast<ClassId>(rng() % 5);
    const SetNetLoss l = total_loss(m, x, y, table);
    const auto params = m.parameters();
    CHECK(l.gradients.size() == params.size());
    for (const auto& [name, p] : params) {
      REQUIRE(l.gradients.count(name) == 1);
      CHECK(l.gradients.at(name).shape() == p->shape());
    }
    CHECK(std::abs(l.total - static_cast<double>(ref::setnet_total_loss<long double>(m, x, y, table))) < 1e-12);
    CHECK(grad_check(precise_setnet_loss_fn(m, x, y, table), flatten(params), 1e-4) <= 1e-4);
  }
}

TEST_CASE("predict: single class, exact row, tie-break, scale invariance, reference") {
  Rng rng(21);
  const SetNetModel m = random_model(2, 8, 4, 3, 5, 0.2);
  const FeatureMap x = random_map(rng, 4, 4, 8);
  const SemanticTable full = random_table(rng, 6, 5, 100);
  const std::vector<ClassId> one{103};
  CHECK(predict(m, x, full.subset(one)) == 103);

  // Identity projector: scores are the attended features themselves.
  const SetNetModel id = identity_model(4);
  FeatureMap pos(1, 1, 4);
  pos.at(0, 0, 2) = 1.0;
  CHECK(predict(id, pos, basis_table(4)) == 12);
  // All-zero features score every class 0: the smallest id wins.
  CHECK(predict(id, FeatureMap(1, 1, 4), basis_table(4)) == 10);

  for (int trial = 0; trial < 100; ++trial) {
    const SetNetModel model = random_model(trial, 8, 4, 3, 5, 0.2);
    const FeatureMap y = random_map(rng, 4, 4, 8);
    const SemanticTable table = random_table(rng, 6, 5, 100);
    const auto scores = class_scores(model, y, table);
    std::size_t best = 0;
    for (std::size_t d = 1; d < scores.size(); ++d) {
      if (scores[d] > scores[best]) best = d;
    }
    const ClassId got = predict(model, y, table);
    CHECK(got == table.class_ids()[best]);
    // Mean and sum over heads pick the same class.
    const auto mean = ensemble_logits(model, attentive_features(y, attention_maps(model, y)), table);
    std::size_t best_mean = 0;
    for (std::size_t d = 1; d < mean.size(); ++d) {
      if (mean[d] > mean[best_mean]) best_mean = d;
    }
    CHECK(best_mean == best);
    // Scaling every projector (weights and biases) by c > 0 scales all scores.
    ProjectorEnsemble pr = model.projectors();
    const double c = uniform(rng, 0.1, 10.0);
    for (auto& w : pr.weights) {
      for (double& v : w.values()) v *= c;
    }
    for (auto& b : pr.biases) {
      for (double& v : b.values()) v *= c;
    }
    CHECK(predict(SetNetModel(model.attention(), pr, 0.2), y, table) == got);
  }
  CHECK_THROWS_AS(predict(m, x, SemanticTable()), InvalidInputError);
}

TEST_CASE("attention CSV export: uniform map, round trip, block structure") {
  const Tensor uni({1, 2, 2}, 0.25);
  std::ostringstream out;
  write_attention_csv(out, uni);
  const std::string text = out.str();
  CHECK(text.find("0.25,0.25\n0.25,0.25") != std::string::npos);

  Rng rng(30);
  const Tensor a = random_attention(rng, 3, 4, 5);
  TempDir dir;
  export_attention(a, dir / "attn.csv");
  std::ifstream in(dir / "attn.csv");
  const Tensor back = parse_attention_csv(in);
  REQUIRE(back.shape() == a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(back[i] - a[i]) < 1e-12);

  std::ostringstream three;
  write_attention_csv(three, a);
  std::istringstream lines(three.str());
  std::string line;
  int blocks = 0, rows = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("# head", 0) == 0) {
      ++blocks;
    } else if (!line.empty()) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 4);
    }
  }
  CHECK(blocks == 3);
  CHECK(rows == 12);

  CHECK_THROWS_AS(export_attention(a, dir / "missing" / "attn.csv"), IoError);
}
