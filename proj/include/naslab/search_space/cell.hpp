#pragma once

#include <span>
#include <string>
#include <vector>

#include "naslab/core/params.hpp"
#include "naslab/search_space/arch_params.hpp"

namespace naslab {

/// Parameters of one candidate operation on one edge.
struct OpModule {
  OpKind kind = OpKind::zero;
  int stride = 1;
  std::vector<ConvLayer> convs;
  std::vector<BatchNormLayer> norms;
};

/// `pool_norm` appends an affine-free batch norm after pooling (relaxed cells only).
OpModule make_op(ParamStore& store, Rng& rng, const std::string& name, OpKind kind, int channels, int stride,
                 bool affine, bool pool_norm);
/// `activated`, when given, must be relu(x); ops that start with a ReLU reuse it.
Var op_forward(const ForwardContext& ctx, const OpModule& op, const Var& x, const Var& activated = Var());

/// sum over ops of weights[row, op] * op(x); ops with weight exactly 0 are skipped.
/// `ops` is indexed by OpKind.
Var mixed_op_forward(const ForwardContext& ctx, std::span<const OpModule> ops, const Var& x, const Var& weights,
                     int row);

/// ReLU -> 1x1 conv (stride 1 or 2) -> batch norm, adapting a cell input to c channels.
struct Preprocess {
  ConvLayer conv;
  BatchNormLayer norm;
};

struct DiscreteEdge {
  int node;
  int src;
  OpModule op;
};

struct Cell {
  CellTemplate shape;
  bool reduction = false;
  std::vector<Preprocess> pre;
  /// Relaxed cells: mixed[edge][op].
  std::vector<std::vector<OpModule>> mixed;
  /// Discrete cells.
  std::vector<DiscreteEdge> edges;

  bool relaxed() const { return !mixed.empty(); }
  int out_channels() const { return shape.n_mid * shape.node_width; }
};

/// `in_channels[i]` / `in_reduce[i]` describe input i; a reducing input is halved spatially by its preprocess.
/// Without `preprocess` the inputs feed the edges directly and must already have node_width channels.
Cell make_relaxed_cell(ParamStore& store, Rng& rng, const std::string& name, const CellTemplate& t, bool reduction,
                       std::span<const int> in_channels, std::span<const bool> in_reduce, bool preprocess = true);
Cell make_discrete_cell(ParamStore& store, Rng& rng, const std::string& name, const CellTemplate& t,
                        const CellGenotype& genotype, bool reduction, std::span<const int> in_channels,
                        std::span<const bool> in_reduce, bool preprocess = true);

/// Intermediate node values x^(j) = sum_{i<j} o^(i,j)(x^(i)) (after preprocessing).
/// Relaxed cells need `weights`, the [E, kNumOps] softmax of the logits.
std::vector<Var> cell_nodes(const ForwardContext& ctx, const Cell& cell, std::span<const Var> inputs,
                            const Var& weights);
/// Output node: channel concatenation of the intermediate nodes.
Var cell_forward(const ForwardContext& ctx, const Cell& cell, std::span<const Var> inputs, const Var& weights);

}  // namespace naslab
