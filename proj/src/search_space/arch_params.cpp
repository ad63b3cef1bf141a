#include "naslab/search_space/arch_params.hpp"

#include <algorithm>

#include "naslab/core/error.hpp"

namespace naslab {

ArchParams ArchParams::zeros(const CellTemplate& t) {
  t.validate();
  return ArchParams{Tensor({t.num_edges(), kNumOps}), Tensor({t.num_edges(), kNumOps}), {}, {}};
}

void ArchParams::restrict_to(OpKind op) {
  auto mask = [op](const Tensor& logits) {
    std::vector<bool> m(logits.size(), false);
    for (int e = 0; e < logits.dim(0); ++e) m[static_cast<std::size_t>(e * kNumOps + op_index(op))] = true;
    return m;
  };
  normal_mask = mask(normal);
  reduce_mask = mask(reduce);
}

bool ArchParams::all_finite() const {
  return naslab::all_finite(normal.values()) && naslab::all_finite(reduce.values());
}

CellGenotype discretize_cell(const Tensor& logits, const std::vector<bool>& mask, const CellTemplate& t) {
  t.validate();
  if (logits.rank() != 2 || logits.dim(0) != t.num_edges() || logits.dim(1) != kNumOps)
    throw InputError("discretize: logits must be [" + std::to_string(t.num_edges()) + ", " +
                     std::to_string(kNumOps) + "], got " + shape_string(logits.shape()));
  if (!naslab::all_finite(logits.values())) throw InputError("discretize: non-finite logits");
  if (!mask.empty() && mask.size() != logits.size()) throw InputError("discretize: mask size mismatch");
  CellGenotype cell;
  for (int k = 0; k < t.n_mid; ++k) {
    const int node = t.n_in + k;
    struct Candidate {
      double score;
      GenotypeEdge edge;
    };
    std::vector<Candidate> cands;
    for (int src = 0; src < node; ++src) {
      const int e = t.edge_index(src, node);
      int best = -1;
      for (int o = 0; o < kNumOps; ++o) {
        if (op_from_index(o) == OpKind::zero) continue;
        const std::size_t at = static_cast<std::size_t>(e * kNumOps + o);
        if (!mask.empty() && !mask[at]) continue;
        if (best < 0 || logits[at] > logits[static_cast<std::size_t>(e * kNumOps + best)]) best = o;
      }
      if (best >= 0) cands.push_back({logits[static_cast<std::size_t>(e * kNumOps + best)], {op_from_index(best), src}});
    }
    if (static_cast<int>(cands.size()) < t.m)
      throw ConfigError("discretize: node " + std::to_string(node) + " has fewer than m usable edges");
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    std::vector<GenotypeEdge> kept;
    for (int i = 0; i < t.m; ++i) kept.push_back(cands[static_cast<std::size_t>(i)].edge);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.src < b.src; });
    cell.nodes.push_back(std::move(kept));
  }
  return cell;
}

Genotype discretize(const ArchParams& params, const CellTemplate& t) {
  Genotype g;
  g.n_in = t.n_in;
  g.normal = discretize_cell(params.normal, params.normal_mask, t);
  g.reduce = discretize_cell(params.reduce, params.reduce_mask, t);
  return g;
}

ArchParams suppress_skip_step(const ArchParams& params, double skip_gamma) {
  if (!(skip_gamma > 0.0 && skip_gamma <= 1.0)) throw ConfigError("skip_gamma must lie in (0, 1]");
  ArchParams out = params;
  for (Tensor* t : {&out.normal, &out.reduce})
    for (int e = 0; e < t->dim(0); ++e) (*t)[static_cast<std::size_t>(e * kNumOps + op_index(OpKind::skip_connect))] *= skip_gamma;
  return out;
}

}  // namespace naslab
