#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dzsl/dataio.hpp"
#include "dzsl/id3m.hpp"
#include "dzsl/setnet.hpp"

namespace dzsl {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double lambda = 0.2;
  std::size_t heads = 4;            // K
  std::size_t hidden_channels = 16;  // C_h
  std::size_t folds = 5;            // I
  int diversity_sign = -1;
  std::size_t ddm_hidden = 64;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct SetNetTraining {
  SetNetModel model;
  std::vector<double> epoch_losses;  // mean per-sample total loss, one per epoch
};

// Initial model train_setnet starts from for this bundle and config.
SetNetModel initial_setnet(const DatasetBundle& bundle, const TrainConfig& cfg);

// Plain minibatch SGD on the mean total loss of seen-class training samples,
// with a seeded reshuffle every epoch. The last partial batch is kept.
SetNetTraining train_setnet(const DatasetBundle& bundle, const TrainConfig& cfg);

// Mean of total_loss over `samples`, gradients averaged the same way.
SetNetLoss batch_loss(const SetNetModel& model, const DatasetBundle& bundle,
                      std::span<const std::size_t> samples, const SemanticTable& table);

// Seen-class training samples split per class into a part used to fit the
// sub-DDMs (80%) and a held-out part used only to calibrate theta (20%).
struct CalibrationSplit {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> held_out;
};
CalibrationSplit calibration_split(const DatasetBundle& bundle, std::uint64_t seed);

struct DdmTraining {
  DdmEnsemble ensemble;              // uncalibrated
  std::vector<double> epoch_losses;  // mean over sub-DDMs of their mean batch loss
};

DdmTraining train_ddm(const DatasetBundle& bundle, const TrainConfig& cfg);

// Sets theta from the held-out calibration samples and returns the degrees
// it was computed from.
std::vector<double> calibrate(DdmEnsemble& ensemble, const DatasetBundle& bundle,
                              const TrainConfig& cfg, double target_fnr);

// ---------------------------------------------------------------------------
// Checkpoints: "SDNC" | u32 version | u32 kind | u32 tensor count |
// per tensor: u32 name length, name, u32 rank, rank x u32 dims, f64 values.

enum class ModelKind : std::uint32_t { SetNet = 1, DdmEnsemble = 2 };
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct SetNetCheckpoint {
  SetNetModel model;
  TrainConfig config;
};

struct DdmCheckpoint {
  DdmEnsemble ensemble;
  TrainConfig config;
};

std::vector<std::uint8_t> encode_checkpoint(const SetNetModel& model, const TrainConfig& cfg);
std::vector<std::uint8_t> encode_checkpoint(const DdmEnsemble& ensemble, const TrainConfig& cfg);
SetNetCheckpoint decode_setnet_checkpoint(std::span<const std::uint8_t> bytes);
DdmCheckpoint decode_ddm_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const SetNetModel& model,
                     const TrainConfig& cfg);
void save_checkpoint(const std::filesystem::path& path, const DdmEnsemble& ensemble,
                     const TrainConfig& cfg);
SetNetCheckpoint load_setnet_checkpoint(const std::filesystem::path& path);
DdmCheckpoint load_ddm_checkpoint(const std::filesystem::path& path);

}  // namespace dzsl
