#include "dzsl/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "binio.hpp"
#include "dzsl/error.hpp"

namespace dzsl {
namespace {

// Independent seeds per purpose (init, shuffling, folds, ...) from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t{out[0]} << 32) | out[1];
}

enum Stream : std::uint32_t {
  kSetNetInit = 1,
  kSetNetShuffle = 2,
  kFolds = 3,
  kCalibrationSplit = 4,
  kDdmInit = 100,
  kDdmShuffle = 200,
};

template <typename Fn>
void for_each_batch(std::span<const std::size_t> order, std::size_t batch_size, Fn&& fn) {
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - start);
    fn(order.subspan(start, len));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidInputError("learning_rate must be a finite value >= 0");
  }
  if (batch_size == 0) throw InvalidInputError("batch_size must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInputError("lambda must be >= 0");
  if (heads == 0) throw InvalidInputError("heads (K) must be >= 1");
  if (hidden_channels == 0) throw InvalidInputError("hidden_channels must be >= 1");
  if (folds < 2) throw InvalidInputError("folds (I) must be >= 2");
  if (diversity_sign != 1 && diversity_sign != -1) {
    throw InvalidInputError("diversity_sign must be +1 or -1");
  }
  if (ddm_hidden == 0) throw InvalidInputError("ddm_hidden must be >= 1");
}

SetNetModel initial_setnet(const DatasetBundle& bundle, const TrainConfig& cfg) {
  cfg.validate();
  const SetNetShape shape{bundle.channels(), cfg.hidden_channels, cfg.heads, bundle.semantics.dim()};
  return SetNetModel::initialize(shape, cfg.lambda, cfg.diversity_sign,
                                 derive_seed(cfg.seed, kSetNetInit));
}

SetNetLoss batch_loss(const SetNetModel& model, const DatasetBundle& bundle,
                      std::span<const std::size_t> samples, const SemanticTable& table) {
  if (samples.empty()) throw InvalidInputError("empty batch");
  SetNetLoss out;
  const double w = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i : samples) {
    const auto l = total_loss(model, bundle.features.at(i), bundle.labels.at(i), table);
    out.total += w * l.total;
    out.classification += w * l.classification;
    out.diversity += w * l.diversity;
    accumulate(out.gradients, l.gradients, w);
  }
  return out;
}

SetNetTraining train_setnet(const DatasetBundle& bundle, const TrainConfig& cfg) {
  cfg.validate();
  bundle.validate();
  std::vector<std::size_t> order;
  for (std::size_t i : bundle.train_indices()) {
    if (bundle.split.is_seen(bundle.labels[i])) order.push_back(i);
  }
  if (order.empty()) throw InvalidInputError("bundle has no seen-class training samples");

  const SemanticTable table = bundle.seen_table();
  SetNetTraining out{initial_setnet(bundle, cfg), {}};
  std::mt19937_64 rng(derive_seed(cfg.seed, kSetNetShuffle));
  const auto params = out.model.parameters();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for_each_batch(order, cfg.batch_size, [&](std::span<const std::size_t> batch) {
      const auto l = batch_loss(out.model, bundle, batch, table);
      sum += l.total * static_cast<double>(batch.size());
      sgd_step(params, l.gradients, cfg.learning_rate);
    });
    out.epoch_losses.push_back(sum / static_cast<double>(order.size()));
  }
  return out;
}

CalibrationSplit calibration_split(const DatasetBundle& bundle, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, kCalibrationSplit));
  CalibrationSplit split;
  for (ClassId id : bundle.split.seen) {
    std::vector<std::size_t> idx;
    for (std::size_t i : bundle.train_indices()) {
      if (bundle.labels[i] == id) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_held = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(idx.size())));
    split.held_out.insert(split.held_out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_held));
    split.fit.insert(split.fit.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_held), idx.end());
  }
  std::sort(split.fit.begin(), split.fit.end());
  std::sort(split.held_out.begin(), split.held_out.end());
  return split;
}

DdmTraining train_ddm(const DatasetBundle& bundle, const TrainConfig& cfg) {
  cfg.validate();
  bundle.validate();
  FoldPartition partition = make_folds(bundle.split, cfg.folds, derive_seed(cfg.seed, kFolds));
  const auto split = calibration_split(bundle, cfg.seed);
  if (split.fit.empty()) throw InvalidInputError("no seen-class training samples to fit sub-DDMs");

  std::vector<std::vector<double>> pooled(bundle.size());
  for (std::size_t i : split.fit) pooled[i] = pooled_features(bundle.features[i]);

  std::vector<SubDdm> members;
  std::vector<double> epoch_losses(cfg.epochs, 0.0);
  for (std::size_t fold = 0; fold < partition.count(); ++fold) {
    const auto& ood_classes = partition.folds[fold];
    SubDdm ddm = SubDdm::initialize(fold, partition.in_distribution(fold), bundle.channels(),
                                    cfg.ddm_hidden,
                                    derive_seed(cfg.seed, kDdmInit + static_cast<std::uint32_t>(fold)));
    const auto params = ddm.parameters();
    std::mt19937_64 rng(derive_seed(cfg.seed, kDdmShuffle + static_cast<std::uint32_t>(fold)));
    std::vector<std::size_t> order = split.fit;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double sum = 0.0;
      std::size_t batches = 0;
      for_each_batch(order, cfg.batch_size, [&](std::span<const std::size_t> batch) {
        std::vector<std::vector<double>> id_x, ood_x;
        std::vector<ClassId> id_y;
        for (std::size_t i : batch) {
          const ClassId y = bundle.labels[i];
          if (std::find(ood_classes.begin(), ood_classes.end(), y) != ood_classes.end()) {
            ood_x.push_back(pooled[i]);
          } else {
            id_x.push_back(pooled[i]);
            id_y.push_back(y);
          }
        }
        const auto l = subddm_loss(ddm, id_x, id_y, ood_x);
        sum += l.value;
        ++batches;
        sgd_step(params, l.gradients, cfg.learning_rate);
      });
      epoch_losses[epoch] += sum / static_cast<double>(batches);
    }
    members.push_back(std::move(ddm));
  }
  for (double& l : epoch_losses) l /= static_cast<double>(partition.count());
  return {DdmEnsemble(std::move(partition), std::move(members)), std::move(epoch_losses)};
}

std::vector<double> calibrate(DdmEnsemble& ensemble, const DatasetBundle& bundle,
                              const TrainConfig& cfg, double target_fnr) {
  const auto split = calibration_split(bundle, cfg.seed);
  if (split.held_out.empty()) throw InvalidInputError("no held-out samples to calibrate theta");
  std::vector<double> degrees;
  degrees.reserve(split.held_out.size());
  for (std::size_t i : split.held_out) degrees.push_back(ensemble.degree(bundle.features[i]));
  ensemble.set_theta(calibrate_theta(degrees, target_fnr));
  return degrees;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

Tensor id_tensor(std::span<const ClassId> ids) {
  std::vector<double> v(ids.begin(), ids.end());
  return Tensor({ids.size()}, std::move(v));
}

void put_config(NamedTensors& out, const TrainConfig& cfg) {
  out.emplace_back("config.learning_rate", scalar(cfg.learning_rate));
  out.emplace_back("config.epochs", scalar(static_cast<double>(cfg.epochs)));
  out.emplace_back("config.batch_size", scalar(static_cast<double>(cfg.batch_size)));
  // Two 32-bit halves so every 64-bit seed survives the f64 encoding.
  out.emplace_back("config.seed", Tensor({2}, std::vector<double>{static_cast<double>(cfg.seed >> 32),
                                                                  static_cast<double>(cfg.seed & 0xffffffffu)}));
  out.emplace_back("config.lambda", scalar(cfg.lambda));
  out.emplace_back("config.heads", scalar(static_cast<double>(cfg.heads)));
  out.emplace_back("config.hidden_channels", scalar(static_cast<double>(cfg.hidden_channels)));
  out.emplace_back("config.folds", scalar(static_cast<double>(cfg.folds)));
  out.emplace_back("config.diversity_sign", scalar(static_cast<double>(cfg.diversity_sign)));
  out.emplace_back("config.ddm_hidden", scalar(static_cast<double>(cfg.ddm_hidden)));
}

std::vector<std::uint8_t> encode(ModelKind kind, const NamedTensors& tensors) {
  binio::Writer w;
  w.bytes("SDNC");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  return std::move(w.buffer());
}

const char* kind_name(std::uint32_t kind) {
  switch (kind) {
    case static_cast<std::uint32_t>(ModelKind::SetNet):
      return "a SetNet model";
    case static_cast<std::uint32_t>(ModelKind::DdmEnsemble):
      return "a DDM ensemble";
    default:
      return "an unknown model kind";
  }
}

class TensorTable {
 public:
  TensorTable(std::span<const std::uint8_t> bytes, ModelKind expected) {
    binio::Reader r(bytes);
    if (bytes.size() < 4 || r.bytes(4) != "SDNC") throw FormatError("bad magic, expected SDNC", 0);
    if (const auto v = r.u32(); v != kCheckpointVersion) {
      throw FormatError("unsupported checkpoint version " + std::to_string(v), 4);
    }
    if (const auto k = r.u32(); k != static_cast<std::uint32_t>(expected)) {
      throw FormatError(std::string("checkpoint holds ") + kind_name(k) + ", expected " +
                            kind_name(static_cast<std::uint32_t>(expected)),
                        8);
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::size_t at = r.offset();
      const std::uint32_t len = r.u32();
      std::string name(r.bytes(len));
      const std::uint32_t rank = r.u32();
      r.need_items(rank, 4);
      Shape shape(rank);
      std::uint64_t n = 1;
      for (auto& d : shape) {
        d = r.u32();
        n *= d;
      }
      r.need_items(n, 8);
      std::vector<double> values(n);
      for (double& v : values) v = r.f64();
      if (!tensors_.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
        throw FormatError("duplicate tensor '" + name + "'", at);
      }
    }
    end_ = r.offset();
    if (r.remaining() != 0) throw FormatError("trailing bytes after tensors", end_);
  }

  Tensor take(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw FormatError("missing tensor '" + name + "'", end_);
    Tensor t = std::move(it->second);
    tensors_.erase(it);
    return t;
  }

  double scalar(const std::string& name) {
    Tensor t = take(name);
    if (t.size() != 1) throw FormatError("tensor '" + name + "' is not a scalar", end_);
    return t[0];
  }

  std::size_t count(const std::string& name) {
    const double v = scalar(name);
    if (!(v >= 0.0) || v != std::floor(v)) throw FormatError("tensor '" + name + "' is not a count", end_);
    return static_cast<std::size_t>(v);
  }

  std::vector<ClassId> ids(const std::string& name) {
    Tensor t = take(name);
    std::vector<ClassId> out;
    for (double v : t.values()) {
      if (!(v >= 0.0) || v > 4294967295.0 || v != std::floor(v)) {
        throw FormatError("tensor '" + name + "' holds a non-integer class id", end_);
      }
      out.push_back(static_cast<ClassId>(v));
    }
    return out;
  }

  bool has(const std::string& name) const { return tensors_.count(name) > 0; }

  void finish() const {
    if (!tensors_.empty()) throw FormatError("unexpected tensor '" + tensors_.begin()->first + "'", end_);
  }

  std::size_t end() const noexcept { return end_; }

 private:
  std::map<std::string, Tensor> tensors_;
  std::size_t end_ = 0;
};

TrainConfig take_config(TensorTable& t) {
  TrainConfig cfg;
  cfg.learning_rate = t.scalar("config.learning_rate");
  cfg.epochs = t.count("config.epochs");
  cfg.batch_size = t.count("config.batch_size");
  const Tensor seed = t.take("config.seed");
  if (seed.size() != 2) throw FormatError("config.seed must hold two halves", t.end());
  cfg.seed = (static_cast<std::uint64_t>(seed[0]) << 32) | static_cast<std::uint64_t>(seed[1]);
  cfg.lambda = t.scalar("config.lambda");
  cfg.heads = t.count("config.heads");
  cfg.hidden_channels = t.count("config.hidden_channels");
  cfg.folds = t.count("config.folds");
  cfg.diversity_sign = static_cast<int>(t.scalar("config.diversity_sign"));
  cfg.ddm_hidden = t.count("config.ddm_hidden");
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("invalid stored config: ") + e.what(), t.end());
  }
  return cfg;
}

template <typename Build>
auto wrap_invariants(const TensorTable& t, Build&& build) {
  try {
    return build();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("invariant violated: ") + e.what(), t.end());
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const SetNetModel& model, const TrainConfig& cfg) {
  NamedTensors tensors;
  put_config(tensors, cfg);
  tensors.emplace_back("model.lambda", scalar(model.lambda()));
  tensors.emplace_back("model.diversity_sign", scalar(model.diversity_sign()));
  for (const auto& [name, t] : model.parameters()) tensors.emplace_back(name, *t);
  return encode(ModelKind::SetNet, tensors);
}

std::vector<std::uint8_t> encode_checkpoint(const DdmEnsemble& ensemble, const TrainConfig& cfg) {
  NamedTensors tensors;
  put_config(tensors, cfg);
  tensors.emplace_back("ddm.count", scalar(static_cast<double>(ensemble.size())));
  if (ensemble.calibrated()) tensors.emplace_back("ddm.theta", scalar(ensemble.theta()));
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const std::string prefix = "ddm." + std::to_string(i) + ".";
    const auto& m = ensemble.members()[i];
    tensors.emplace_back(prefix + "ood_classes", id_tensor(ensemble.partition().folds[i]));
    tensors.emplace_back(prefix + "id_classes", id_tensor(m.id_classes()));
    for (const auto& [name, t] : m.parameters()) tensors.emplace_back(prefix + name, *t);
  }
  return encode(ModelKind::DdmEnsemble, tensors);
}

SetNetCheckpoint decode_setnet_checkpoint(std::span<const std::uint8_t> bytes) {
  TensorTable t(bytes, ModelKind::SetNet);
  SetNetCheckpoint out;
  out.config = take_config(t);
  out.model = wrap_invariants(t, [&] {
    const double lambda = t.scalar("model.lambda");
    const int sign = static_cast<int>(t.scalar("model.diversity_sign"));
    AttentionStack stack{t.take("attention.w1"), t.take("attention.b1"), t.take("attention.w2"),
                         t.take("attention.b2")};
    ProjectorEnsemble ens;
    for (std::size_t k = 0; t.has("projector." + std::to_string(k) + ".weight"); ++k) {
      ens.weights.push_back(t.take("projector." + std::to_string(k) + ".weight"));
      ens.biases.push_back(t.take("projector." + std::to_string(k) + ".bias"));
    }
    return SetNetModel(std::move(stack), std::move(ens), lambda, sign);
  });
  t.finish();
  return out;
}

DdmCheckpoint decode_ddm_checkpoint(std::span<const std::uint8_t> bytes) {
  TensorTable t(bytes, ModelKind::DdmEnsemble);
  DdmCheckpoint out;
  out.config = take_config(t);
  out.ensemble = wrap_invariants(t, [&] {
    const std::size_t n = t.count("ddm.count");
    std::optional<double> theta;
    if (t.has("ddm.theta")) theta = t.scalar("ddm.theta");
    FoldPartition partition;
    std::vector<SubDdm> members;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string prefix = "ddm." + std::to_string(i) + ".";
      partition.folds.push_back(t.ids(prefix + "ood_classes"));
      auto ids = t.ids(prefix + "id_classes");
      members.emplace_back(i, std::move(ids), t.take(prefix + "w1"), t.take(prefix + "b1"),
                           t.take(prefix + "w2"), t.take(prefix + "b2"));
    }
    DdmEnsemble e(std::move(partition), std::move(members));
    if (theta) e.set_theta(*theta);
    return e;
  });
  t.finish();
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const SetNetModel& model,
                     const TrainConfig& cfg) {
  binio::write_file(path, encode_checkpoint(model, cfg));
}

void save_checkpoint(const std::filesystem::path& path, const DdmEnsemble& ensemble,
                     const TrainConfig& cfg) {
  binio::write_file(path, encode_checkpoint(ensemble, cfg));
}

SetNetCheckpoint load_setnet_checkpoint(const std::filesystem::path& path) {
  return decode_setnet_checkpoint(binio::read_file(path));
}

DdmCheckpoint load_ddm_checkpoint(const std::filesystem::path& path) {
  return decode_ddm_checkpoint(binio::read_file(path));
}

}  // namespace dzsl
