#include "dzsl/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "binio.hpp"
#include "dzsl/error.hpp"

namespace dzsl {

namespace binio {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace binio

bool SplitSpec::is_seen(ClassId id) const {
  return std::find(seen.begin(), seen.end(), id) != seen.end();
}

bool SplitSpec::is_unseen(ClassId id) const {
  return std::find(unseen.begin(), unseen.end(), id) != unseen.end();
}

void DatasetBundle::validate() const {
  if (features.empty()) throw InvalidInputError("bundle has no samples");
  if (labels.size() != features.size() || split.is_train.size() != features.size()) {
    throw InvalidInputError("bundle has mismatched sample, label and split counts");
  }
  const std::size_t h = height(), w = width(), c = channels();
  for (const auto& m : features) {
    if (m.height() != h || m.width() != w || m.channels() != c) {
      throw InvalidInputError("feature maps do not share one shape");
    }
    if (!m.tensor().all_finite()) throw InvalidInputError("non-finite feature value");
  }
  std::set<ClassId> seen(split.seen.begin(), split.seen.end());
  std::set<ClassId> unseen(split.unseen.begin(), split.unseen.end());
  if (seen.size() != split.seen.size() || unseen.size() != split.unseen.size()) {
    throw InvalidInputError("duplicate ids in the seen/unseen split");
  }
  for (ClassId id : seen) {
    if (unseen.count(id)) throw InvalidInputError("class " + std::to_string(id) + " is both seen and unseen");
  }
  for (ClassId id : semantics.class_ids()) {
    if (!seen.count(id) && !unseen.count(id)) {
      throw InvalidInputError("class " + std::to_string(id) + " is neither seen nor unseen");
    }
  }
  if (seen.size() + unseen.size() != semantics.size()) {
    throw InvalidInputError("split references classes missing from the semantic table");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!semantics.contains(labels[i])) {
      throw InvalidInputError("label " + std::to_string(labels[i]) + " of sample " +
                              std::to_string(i) + " is not in the semantic table");
    }
    if (split.is_train[i] > 1) throw InvalidInputError("train flag must be 0 or 1");
    if (split.is_train[i] && !seen.count(labels[i])) {
      throw InvalidInputError("training sample " + std::to_string(i) + " has an unseen class");
    }
  }
}

namespace {

std::vector<std::size_t> select(const DatasetBundle& b, auto pred) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (pred(i)) out.push_back(i);
  }
  return out;
}

}  // namespace

std::vector<std::size_t> DatasetBundle::train_indices() const {
  return select(*this, [&](std::size_t i) { return split.is_train[i] == 1; });
}

std::vector<std::size_t> DatasetBundle::test_indices() const {
  return select(*this, [&](std::size_t i) { return split.is_train[i] == 0; });
}

std::vector<std::size_t> DatasetBundle::seen_test_indices() const {
  return select(*this, [&](std::size_t i) { return !split.is_train[i] && split.is_seen(labels[i]); });
}

std::vector<std::size_t> DatasetBundle::unseen_test_indices() const {
  return select(*this,
                [&](std::size_t i) { return !split.is_train[i] && split.is_unseen(labels[i]); });
}

std::vector<std::uint8_t> encode_bundle(const DatasetBundle& b) {
  b.validate();
  binio::Writer w;
  const std::size_t n = b.size(), h = b.height(), wd = b.width(), c = b.channels();
  const std::size_t s = b.semantics.dim(), d = b.semantics.size();
  w.bytes("SDNB");
  w.u32(kBundleVersion);
  for (std::size_t v : {n, h, wd, c, s, d, b.split.seen.size()}) w.u32(static_cast<std::uint32_t>(v));
  for (ClassId id : b.semantics.class_ids()) w.u32(id);
  for (double v : b.semantics.vectors().values()) w.f32(static_cast<float>(v));
  for (ClassId id : b.split.seen) w.u32(id);
  for (ClassId y : b.labels) w.u32(y);
  for (std::uint8_t f : b.split.is_train) w.u8(f);
  for (const auto& m : b.features) {
    for (double v : m.tensor().values()) w.f32(static_cast<float>(v));
  }
  return std::move(w.buffer());
}

DatasetBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  if (bytes.size() < 4 || r.bytes(4) != "SDNB") throw FormatError("bad magic, expected SDNB", 0);
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kBundleVersion) {
    throw FormatError("unsupported bundle version " + std::to_string(v), version_at);
  }
  const std::size_t dims_at = r.offset();
  const std::uint64_t n = r.u32(), h = r.u32(), w = r.u32(), c = r.u32(), s = r.u32(), d = r.u32();
  const std::uint64_t n_seen = r.u32();
  if (n == 0 || h == 0 || w == 0 || c == 0 || s == 0 || d == 0) {
    throw FormatError("zero-sized dimension in header", dims_at);
  }
  if (n_seen > d) throw FormatError("more seen classes than classes", dims_at + 24);

  r.need_items(d, 4);
  std::vector<ClassId> ids(d);
  for (auto& id : ids) id = r.u32();
  const std::size_t sem_at = r.offset();
  r.need_items(d * s, 4);
  Tensor sem({d, s});
  for (double& v : sem.values()) v = r.f32();

  DatasetBundle b;
  try {
    b.semantics = SemanticTable(ids, std::move(sem));
  } catch (const Error& e) {
    throw FormatError(std::string("invariant violated in semantic table: ") + e.what(), sem_at);
  }

  const std::size_t seen_at = r.offset();
  r.need_items(n_seen, 4);
  for (std::uint64_t i = 0; i < n_seen; ++i) b.split.seen.push_back(r.u32());
  for (ClassId id : ids) {
    if (!b.split.is_seen(id)) b.split.unseen.push_back(id);
  }
  if (b.split.seen.size() + b.split.unseen.size() != d) {
    throw FormatError("invariant violated: seen ids are duplicated or not in the table", seen_at);
  }

  const std::size_t labels_at = r.offset();
  r.need_items(n, 4);
  b.labels.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    b.labels[i] = r.u32();
    if (!b.semantics.contains(b.labels[i])) {
      throw FormatError("invariant violated: label " + std::to_string(b.labels[i]) +
                            " references a class missing from the semantic table",
                        labels_at + 4 * i);
    }
  }
  const std::size_t flags_at = r.offset();
  r.need_items(n, 1);
  b.split.is_train.resize(n);
  for (auto& f : b.split.is_train) f = r.u8();

  r.need_items(n * h * w, 4 * c);
  b.features.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Tensor t({h, w, c});
    for (double& v : t.values()) v = r.f32();
    b.features.emplace_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after feature data", r.offset());

  try {
    b.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("invariant violated: ") + e.what(), flags_at);
  }
  return b;
}

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& path) {
  binio::write_file(path, encode_bundle(bundle));
}

DatasetBundle load_bundle(const std::filesystem::path& path) {
  return decode_bundle(binio::read_file(path));
}

void SyntheticSpec::validate() const {
  if (seen_classes == 0) throw InvalidInputError("synthetic: seen_classes must be >= 1");
  if (samples_per_class == 0) throw InvalidInputError("synthetic: samples_per_class must be >= 1");
  if (height == 0 || width == 0 || channels == 0 || semantic_dim == 0) {
    throw InvalidInputError("synthetic: dimensions must be >= 1");
  }
  if (attributes_per_class == 0 || attributes_per_class > semantic_dim) {
    throw InvalidInputError("synthetic: attributes_per_class must lie in [1, semantic_dim]");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw InvalidInputError("synthetic: noise must be >= 0");
  // Distinct attribute subsets need C(S, a) >= number of classes.
  const std::size_t classes = seen_classes + unseen_classes;
  double subsets = 1.0;
  for (std::size_t i = 0; i < attributes_per_class; ++i) {
    subsets = subsets * static_cast<double>(semantic_dim - i) / static_cast<double>(i + 1);
  }
  if (std::round(subsets) < static_cast<double>(classes)) {
    throw InvalidInputError("synthetic: only " + std::to_string(static_cast<long long>(std::round(subsets))) +
                            " distinct attribute subsets for " + std::to_string(classes) +
                            " classes");
  }
}

DatasetBundle gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t h = spec.height, w = spec.width, c = spec.channels, s = spec.semantic_dim;
  const std::size_t classes = spec.seen_classes + spec.unseen_classes;

  // Attribute signatures and home cells.
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> signature(s, std::vector<double>(c));
  std::vector<std::pair<std::size_t, std::size_t>> home(s);
  std::uniform_int_distribution<std::size_t> pick_h(0, h - 1), pick_w(0, w - 1);
  for (std::size_t a = 0; a < s; ++a) {
    double sq = 0.0;
    do {
      sq = 0.0;
      for (double& v : signature[a]) {
        v = gauss(rng);
        sq += v * v;
      }
    } while (sq == 0.0);
    for (double& v : signature[a]) v /= std::sqrt(sq);
    home[a] = {pick_h(rng), pick_w(rng)};
  }

  // Distinct attribute subsets per class.
  std::set<std::vector<std::size_t>> used;
  std::vector<std::vector<std::size_t>> active(classes);
  std::vector<std::size_t> pool(s);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<std::size_t> subset;
    do {
      std::shuffle(pool.begin(), pool.end(), rng);
      subset.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.attributes_per_class));
      std::sort(subset.begin(), subset.end());
    } while (used.count(subset));
    used.insert(subset);
    active[k] = subset;
  }
  std::vector<ClassId> ids(classes);
  std::iota(ids.begin(), ids.end(), ClassId{0});
  Tensor sem({classes, s});
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t a : active[k]) sem.at(k, a) = 1.0;
  }

  DatasetBundle b;
  b.semantics = SemanticTable::normalized(ids, std::move(sem));

  std::vector<ClassId> order = ids;
  std::shuffle(order.begin(), order.end(), rng);
  b.split.seen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.seen_classes));
  b.split.unseen.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.seen_classes), order.end());
  std::sort(b.split.seen.begin(), b.split.seen.end());
  std::sort(b.split.unseen.begin(), b.split.unseen.end());

  const auto jitter = static_cast<long long>(spec.jitter);
  std::uniform_int_distribution<long long> shift(-jitter, jitter);
  std::normal_distribution<double> unit_noise(0.0, 1.0);
  auto clamp_cell = [](long long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<long long>(v, 0, static_cast<long long>(n) - 1));
  };
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      FeatureMap m(h, w, c);
      for (std::size_t a : active[k]) {
        const std::size_t hh = clamp_cell(static_cast<long long>(home[a].first) + shift(rng), h);
        const std::size_t ww = clamp_cell(static_cast<long long>(home[a].second) + shift(rng), w);
        for (std::size_t ch = 0; ch < c; ++ch) m.at(hh, ww, ch) += signature[a][ch];
      }
      for (double& v : m.tensor().values()) {
        if (spec.noise > 0.0) v += spec.noise * unit_noise(rng);
        // Stored at the container's precision so save/load is lossless.
        v = static_cast<double>(static_cast<float>(v));
      }
      b.features.push_back(std::move(m));
      b.labels.push_back(ids[k]);
    }
  }

  // 80/20 train/test per seen class; unseen samples are all test.
  b.split.is_train.assign(b.size(), 0);
  for (std::size_t k = 0; k < classes; ++k) {
    if (!b.split.is_seen(ids[k])) continue;
    std::vector<std::size_t> idx(spec.samples_per_class);
    std::iota(idx.begin(), idx.end(), k * spec.samples_per_class);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_test = spec.samples_per_class / 5;
    for (std::size_t j = n_test; j < idx.size(); ++j) b.split.is_train[idx[j]] = 1;
  }
  b.validate();
  return b;
}

FoldPartition make_folds(const SplitSpec& split, std::size_t folds, std::uint64_t seed) {
  return partition_classes(split.seen, folds, seed);
}

}  // namespace dzsl
