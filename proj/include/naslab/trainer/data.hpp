#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "naslab/core/dataset.hpp"

namespace naslab {

/// Where a dataset comes from and how much of it to keep.
struct DatasetSpec {
  std::string name = "synthetic";
  /// "synthetic" or "cifar10".
  std::string source = "synthetic";
  /// CIFAR-10 directory holding data_batch_{1..5}.bin and test_batch.bin.
  std::string path;
  int num_classes = 10;
  /// {C, H, W}; CIFAR images are average-pooled down when H, W divide 32.
  Shape input{3, 16, 16};
  int train_size = 2000;
  int test_size = 1000;
  std::uint64_t seed = 0;

  // Synthetic generator knobs.
  int blobs_per_class = 3;
  int distractors = 2;
  double contrast = 0.35;
  double noise = 0.1;
  /// Whole-pattern shift range in pixels.
  double jitter = 3.0;

  void validate() const;
};

/// Gaussian-blob class textures: every class owns a few coloured blobs whose
/// positions jitter per sample, over a noisy background with random distractor blobs.
DataSplit make_synthetic(const DatasetSpec& spec);

/// One CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes (R, G, B planes).
/// Throws ParseError at the offending byte offset.
Dataset read_cifar10_batch(const std::string& path);
/// Train/test subsets drawn by seed from the CIFAR-10 directory named in `spec`.
DataSplit load_cifar10(const DatasetSpec& spec);

/// The `count` row ids, out of `total`, that seeded subset selection keeps.
std::vector<int> subset_rows(int total, int count, std::uint64_t seed);

/// Builds the split `spec` describes. `data_root` replaces an empty or relative CIFAR path prefix.
DataSplit load_dataset(const DatasetSpec& spec, const std::string& data_root = "");

/// k x k average pooling of every image.
Dataset downsample(const Dataset& data, int factor);

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

}  // namespace naslab
