#pragma once

#include <span>
#include <string>
#include <vector>

#include "naslab/core/tensor.hpp"

namespace naslab {

/// Images in NCHW layout with pixel values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;

  int size() const noexcept { return static_cast<int>(labels.size()); }
  Shape sample_shape() const;
  Dataset subset(std::span<const int> rows) const;
  Dataset slice(int first, int count) const;
  /// Throws InputError on inconsistent shapes or out-of-range labels.
  void validate() const;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

}  // namespace naslab
