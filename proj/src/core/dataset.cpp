#include "naslab/core/dataset.hpp"

#include "naslab/core/error.hpp"

namespace naslab {

Shape Dataset::sample_shape() const {
  if (images.rank() < 2) return {};
  return Shape(images.shape().begin() + 1, images.shape().end());
}

Dataset Dataset::subset(std::span<const int> rows) const {
  Dataset out;
  out.images = gather_rows(images, rows);
  out.num_classes = num_classes;
  out.labels.reserve(rows.size());
  for (int r : rows) out.labels.push_back(labels.at(static_cast<std::size_t>(r)));
  return out;
}

Dataset Dataset::slice(int first, int count) const {
  Dataset out;
  out.images = slice_rows(images, first, count);
  out.labels.assign(labels.begin() + first, labels.begin() + first + count);
  out.num_classes = num_classes;
  return out;
}

void Dataset::validate() const {
  if (num_classes < 2) throw InputError("dataset needs at least two classes");
  if (images.rank() != 4) throw InputError("dataset images must be NCHW, got " + shape_string(images.shape()));
  if (images.dim(0) != size()) throw InputError("dataset image and label counts differ");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw InputError("label " + std::to_string(y) + " outside [0, m)");
}

}  // namespace naslab
