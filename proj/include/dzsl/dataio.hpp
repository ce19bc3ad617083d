#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dzsl/feature_map.hpp"
#include "dzsl/id3m.hpp"
#include "dzsl/semantic_table.hpp"

namespace dzsl {

struct SplitSpec {
  std::vector<ClassId> seen;
  std::vector<ClassId> unseen;
  std::vector<std::uint8_t> is_train;  // per sample, 1 = train

  bool is_seen(ClassId id) const;
  bool is_unseen(ClassId id) const;
};

struct DatasetBundle {
  std::vector<FeatureMap> features;
  std::vector<ClassId> labels;
  SemanticTable semantics;
  SplitSpec split;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t height() const { return features.at(0).height(); }
  std::size_t width() const { return features.at(0).width(); }
  std::size_t channels() const { return features.at(0).channels(); }

  // Throws InvalidInputError when any bundle or split invariant is violated.
  void validate() const;

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
  // Test samples whose class is seen (resp. unseen).
  std::vector<std::size_t> seen_test_indices() const;
  std::vector<std::size_t> unseen_test_indices() const;

  SemanticTable seen_table() const { return semantics.subset(split.seen); }
  SemanticTable unseen_table() const { return semantics.subset(split.unseen); }
};

// Binary container, little-endian:
//   "SDNB" | u32 version=1 | u32 N H W C S D | u32 seen count
//   | D x u32 class ids | D*S x f32 semantics | seen x u32 ids
//   | N x u32 labels | N x u8 train flags | N*H*W*C x f32 features
// Unseen classes are the table classes not listed as seen.
inline constexpr std::uint32_t kBundleVersion = 1;

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& path);
DatasetBundle load_bundle(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_bundle(const DatasetBundle& bundle);
DatasetBundle decode_bundle(std::span<const std::uint8_t> bytes);

struct SyntheticSpec {
  std::size_t seen_classes = 10;
  std::size_t unseen_classes = 5;
  std::size_t samples_per_class = 30;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 32;
  std::size_t semantic_dim = 16;
  std::size_t attributes_per_class = 4;
  double noise = 0.1;
  // Maximum displacement (in cells, per axis) of an attribute from its home cell.
  std::size_t jitter = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Attribute s has a unit-norm channel signature and a home cell; a sample of
// a class carrying s gets the signature added near that cell, plus Gaussian
// noise everywhere. Random draws use std::mt19937_64 seeded from `seed`.
DatasetBundle gen_synthetic(const SyntheticSpec& spec);

FoldPartition make_folds(const SplitSpec& split, std::size_t folds, std::uint64_t seed);

}  // namespace dzsl
