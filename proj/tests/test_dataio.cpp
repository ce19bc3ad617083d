#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "dzsl/dataio.hpp"
#include "dzsl/error.hpp"
#include "prototype_oracle.hpp"
#include "support.hpp"

using namespace dzsl;
using namespace dzsl::testing;

namespace {

void check_same(const DatasetBundle& a, const DatasetBundle& b) {
  REQUIRE(a.size() == b.size());
  CHECK(a.labels == b.labels);
  CHECK(a.split.seen == b.split.seen);
  CHECK(a.split.unseen == b.split.unseen);
  CHECK(a.split.is_train == b.split.is_train);
  CHECK(a.semantics.class_ids() == b.semantics.class_ids());
  CHECK(bitwise_equal(a.semantics.vectors(), b.semantics.vectors()));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bitwise_equal(a.features[i].tensor(), b.features[i].tensor()));
}

// Random valid bundle whose values are all representable in f32.
DatasetBundle random_bundle(Rng& rng) {
  const std::size_t d = 2 + rng() % 5, s = 1 + rng() % 4, n = 1 + rng() % 12;
  const std::size_t h = 1 + rng() % 3, w = 1 + rng() % 3, c = 1 + rng() % 4;
  std::vector<ClassId> ids;
  std::set<ClassId> used;
  while (ids.size() < d) {
    const auto id = static_cast<ClassId>(rng() % 1000);
    if (used.insert(id).second) ids.push_back(id);
  }
  // One-hot semantic rows are exactly unit norm in f32.
  Tensor sem({d, s});
  for (std::size_t i = 0; i < d; ++i) sem.at(i, rng() % s) = 1.0;
  DatasetBundle b;
  b.semantics = SemanticTable(ids, sem);
  const std::size_t n_seen = 1 + rng() % (d - 1);
  b.split.seen.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_seen));
  b.split.unseen.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_seen), ids.end());
  for (std::size_t i = 0; i < n; ++i) {
    const ClassId y = ids[rng() % d];
    b.labels.push_back(y);
    b.split.is_train.push_back(b.split.is_seen(y) && rng() % 2 ? 1 : 0);
    Tensor t({h, w, c});
    for (double& v : t.values()) v = static_cast<float>(uniform(rng, -10.0, 10.0));
    b.features.emplace_back(std::move(t));
  }
  b.validate();
  return b;
}

std::size_t label_offset(const DatasetBundle& b) {
  const std::size_t d = b.semantics.size(), s = b.semantics.dim();
  return 4 + 4 + 7 * 4 + 4 * d + 4 * d * s + 4 * b.split.seen.size();
}

}  // namespace

TEST_CASE("bundle round trip is bitwise through memory and files") {
  const DatasetBundle b = gen_synthetic(SyntheticSpec{});
  check_same(b, decode_bundle(encode_bundle(b)));
  TempDir dir;
  save_bundle(b, dir / "b.sdnb");
  check_same(b, load_bundle(dir / "b.sdnb"));

  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    const DatasetBundle r = random_bundle(rng);
    const auto bytes = encode_bundle(r);
    check_same(r, decode_bundle(bytes));
    CHECK(encode_bundle(decode_bundle(bytes)) == bytes);
  }
}

TEST_CASE("bundle decoding reports malformed input with offsets") {
  Rng rng(7);
  const DatasetBundle b = random_bundle(rng);
  const auto good = encode_bundle(b);

  auto magic = good;
  magic[0] = 'X';
  try {
    decode_bundle(magic);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
    CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
  }

  auto version = good;
  version[4] = 2;
  try {
    decode_bundle(version);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 4);
  }

  auto label = good;
  const std::size_t at = label_offset(b);
  const std::uint32_t missing = 5000;
  std::memcpy(label.data() + at, &missing, 4);
  try {
    decode_bundle(label);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.offset() == at);
    CHECK(std::string(e.what()).find("invariant") != std::string::npos);
  }

  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    const std::vector<std::uint8_t> trunc(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_bundle(trunc), FormatError);
  }
  auto extra = good;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_bundle(extra), FormatError);

  TempDir dir;
  CHECK_THROWS_AS(load_bundle(dir / "nope.sdnb"), IoError);
}

TEST_CASE("bundle validation rejects broken invariants") {
  Rng rng(9);
  DatasetBundle b = random_bundle(rng);
  DatasetBundle bad_label = b;
  bad_label.labels[0] = 5000;
  CHECK_THROWS_AS(bad_label.validate(), InvalidInputError);

  DatasetBundle train_unseen = b;
  train_unseen.labels[0] = train_unseen.split.unseen[0];
  train_unseen.split.is_train[0] = 1;
  CHECK_THROWS_AS(train_unseen.validate(), InvalidInputError);

  DatasetBundle overlap = b;
  overlap.split.unseen.push_back(overlap.split.seen[0]);
  CHECK_THROWS_AS(overlap.validate(), InvalidInputError);

  DatasetBundle shapes = b;
  shapes.features[0] = FeatureMap(9, 9, 9);
  CHECK_THROWS_AS(shapes.validate(), InvalidInputError);
  CHECK_THROWS_AS(encode_bundle(shapes), InvalidInputError);
}

TEST_CASE("gen_synthetic is deterministic per seed") {
  SyntheticSpec spec;
  spec.seed = 17;
  CHECK(encode_bundle(gen_synthetic(spec)) == encode_bundle(gen_synthetic(spec)));
  SyntheticSpec other = spec;
  other.seed = 18;
  CHECK(encode_bundle(gen_synthetic(spec)) != encode_bundle(gen_synthetic(other)));
}

TEST_CASE("gen_synthetic noiseless single-attribute case places one signature") {
  SyntheticSpec spec;
  spec.noise = 0.0;
  spec.attributes_per_class = 1;
  spec.jitter = 0;
  spec.seen_classes = 6;
  spec.unseen_classes = 4;
  spec.semantic_dim = 12;
  const DatasetBundle b = gen_synthetic(spec);
  std::map<ClassId, std::vector<double>> first;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const FeatureMap& m = b.features[i];
    std::size_t nonzero_cells = 0;
    for (std::size_t t = 0; t < m.cells(); ++t) {
      double sq = 0.0;
      bool any = false;
      for (double v : m.cell(t)) {
        sq += v * v;
        any = any || v != 0.0;
      }
      if (!any) continue;
      ++nonzero_cells;
      CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-6);
    }
    CHECK(nonzero_cells == 1);
    auto [it, fresh] = first.try_emplace(b.labels[i], m.tensor().storage());
    if (!fresh) CHECK(it->second == m.tensor().storage());
  }
}

TEST_CASE("gen_synthetic output satisfies bundle and split invariants") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.samples_per_class = 10 + seed;
    spec.attributes_per_class = 1 + seed % 5;
    const DatasetBundle b = gen_synthetic(spec);
    b.validate();
    CHECK(b.split.seen.size() == spec.seen_classes);
    CHECK(b.split.unseen.size() == spec.unseen_classes);
    for (std::size_t d = 0; d < b.semantics.size(); ++d) {
      double sq = 0.0;
      for (double v : b.semantics.row(d)) sq += v * v;
      CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
    }
    std::map<ClassId, std::size_t> test_count;
    for (std::size_t i : b.test_indices()) ++test_count[b.labels[i]];
    for (ClassId id : b.split.seen) CHECK(test_count[id] == spec.samples_per_class / 5);
    for (ClassId id : b.split.unseen) CHECK(test_count[id] == spec.samples_per_class);
    // Distinct semantic rows.
    std::set<std::vector<double>> rows;
    for (std::size_t d = 0; d < b.semantics.size(); ++d) {
      rows.emplace(b.semantics.row(d).begin(), b.semantics.row(d).end());
    }
    CHECK(rows.size() == b.semantics.size());
  }
}

TEST_CASE("gen_synthetic rejects impossible or invalid specs") {
  SyntheticSpec spec;
  spec.semantic_dim = 4;
  spec.attributes_per_class = 2;  // 6 subsets for 15 classes
  CHECK_THROWS_AS(gen_synthetic(spec), InvalidInputError);
  spec = SyntheticSpec{};
  spec.attributes_per_class = 17;
  CHECK_THROWS_AS(gen_synthetic(spec), InvalidInputError);
  spec = SyntheticSpec{};
  spec.noise = -0.1;
  CHECK_THROWS_AS(gen_synthetic(spec), InvalidInputError);
}

TEST_CASE("default synthetic bundle is learnable by an attention-free prototype baseline") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const double acc = prototype_oracle_accuracy(gen_synthetic(spec));
    MESSAGE("seed " << seed << " prototype oracle unseen ACC " << acc);
    CHECK(acc > 0.2);
  }
}

TEST_CASE("make_folds delegates to partition_classes over the seen classes") {
  const DatasetBundle b = gen_synthetic(SyntheticSpec{});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const FoldPartition p = make_folds(b.split, 5, seed);
    CHECK(p.folds == partition_classes(b.split.seen, 5, seed).folds);
    for (const auto& f : p.folds) {
      CHECK(f.size() == 2);
      for (ClassId c : f) CHECK(b.split.is_seen(c));
    }
  }
}
