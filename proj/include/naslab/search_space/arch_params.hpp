#pragma once

#include <vector>

#include "naslab/core/tensor.hpp"
#include "naslab/search_space/genotype.hpp"

namespace naslab {

/// Per-edge operation logits [E, kNumOps] for the normal and reduction cells.
/// An optional mask (same layout, flattened) restricts which ops an edge may use.
struct ArchParams {
  Tensor normal;
  Tensor reduce;
  std::vector<bool> normal_mask;
  std::vector<bool> reduce_mask;

  static ArchParams zeros(const CellTemplate& t);
  /// Mask allowing only `op` on every edge.
  void restrict_to(OpKind op);
  bool all_finite() const;
};

/// Per edge: argmax over allowed ops except zero (ties to the lower index).
/// Per node: keep the m edges with the largest selected logit (ties to the lower src).
Genotype discretize(const ArchParams& params, const CellTemplate& t);
CellGenotype discretize_cell(const Tensor& logits, const std::vector<bool>& mask, const CellTemplate& t);

/// Multiplies every skip_connect logit by gamma.
ArchParams suppress_skip_step(const ArchParams& params, double skip_gamma);

}  // namespace naslab
