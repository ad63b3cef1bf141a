#include "naslab/search_space/cell.hpp"

#include "naslab/core/error.hpp"

namespace naslab {

namespace {

int kernel_of(OpKind kind) {
  switch (kind) {
    case OpKind::sep_conv_5x5:
    case OpKind::dil_conv_5x5:
      return 5;
    case OpKind::sep_conv_7x7:
      return 7;
    default:
      return 3;
  }
}

void add_relu_conv_bn(OpModule& op, ParamStore& store, Rng& rng, const std::string& name, int c, int stride,
                      bool affine) {
  op.convs.push_back(make_conv(store, rng, name + ".conv", c, c, conv_geom(1, stride)));
  op.norms.push_back(make_batch_norm(store, name + ".bn", c, affine));
}

}  // namespace

OpModule make_op(ParamStore& store, Rng& rng, const std::string& name, OpKind kind, int c, int stride, bool affine,
                 bool pool_norm) {
  if (stride != 1 && stride != 2) throw ConfigError("op stride must be 1 or 2");
  OpModule op;
  op.kind = kind;
  op.stride = stride;
  switch (kind) {
    case OpKind::zero:
      break;
    case OpKind::skip_connect:
      if (stride == 2) add_relu_conv_bn(op, store, rng, name + ".reduce", c, 2, affine);
      break;
    case OpKind::max_pool_3x3:
    case OpKind::avg_pool_3x3:
      if (pool_norm) op.norms.push_back(make_batch_norm(store, name + ".bn", c, false));
      break;
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
    case OpKind::sep_conv_7x7: {
      const int k = kernel_of(kind);
      for (int rep = 0; rep < 2; ++rep) {
        const std::string n = name + ".sep" + std::to_string(rep);
        op.convs.push_back(make_conv(store, rng, n + ".dw", c, c, conv_geom(k, rep == 0 ? stride : 1, 1, c)));
        op.convs.push_back(make_conv(store, rng, n + ".pw", c, c, conv_geom(1)));
        op.norms.push_back(make_batch_norm(store, n + ".bn", c, affine));
      }
      break;
    }
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5: {
      const int k = kernel_of(kind);
      op.convs.push_back(make_conv(store, rng, name + ".dw", c, c, conv_geom(k, stride, 2, c)));
      op.convs.push_back(make_conv(store, rng, name + ".pw", c, c, conv_geom(1)));
      op.norms.push_back(make_batch_norm(store, name + ".bn", c, affine));
      break;
    }
    case OpKind::conv_1x7_7x1: {
      op.convs.push_back(make_conv(store, rng, name + ".1x7", c, c, Conv2dGeometry{1, 7, 1, stride, 0, 3, 1, 1}));
      op.convs.push_back(make_conv(store, rng, name + ".7x1", c, c, Conv2dGeometry{7, 1, stride, 1, 3, 0, 1, 1}));
      op.norms.push_back(make_batch_norm(store, name + ".bn", c, affine));
      break;
    }
  }
  return op;
}

Var op_forward(const ForwardContext& ctx, const OpModule& op, const Var& x, const Var& activated) {
  auto act = [&]() { return activated.valid() ? activated : relu(x); };
  switch (op.kind) {
    case OpKind::zero: {
      Shape s = x.shape();
      if (op.stride == 2) {
        s[2] = (s[2] + 1) / 2;
        s[3] = (s[3] + 1) / 2;
      }
      return ctx.tape->constant(Tensor(s));
    }
    case OpKind::skip_connect:
      if (op.stride == 1) return x;
      return ctx.batch_norm(op.norms[0], ctx.conv(op.convs[0], act()));
    case OpKind::max_pool_3x3:
    case OpKind::avg_pool_3x3: {
      const Pool2dGeometry g{3, op.stride, 1};
      Var y = op.kind == OpKind::max_pool_3x3 ? max_pool2d(x, g) : avg_pool2d(x, g);
      return op.norms.empty() ? y : ctx.batch_norm(op.norms[0], y);
    }
    case OpKind::sep_conv_3x3:
    case OpKind::sep_conv_5x5:
    case OpKind::sep_conv_7x7: {
      Var y = x;
      for (int rep = 0; rep < 2; ++rep) {
        y = ctx.conv(op.convs[static_cast<std::size_t>(2 * rep)], rep == 0 ? act() : relu(y));
        y = ctx.conv(op.convs[static_cast<std::size_t>(2 * rep + 1)], y);
        y = ctx.batch_norm(op.norms[static_cast<std::size_t>(rep)], y);
      }
      return y;
    }
    case OpKind::dil_conv_3x3:
    case OpKind::dil_conv_5x5:
    case OpKind::conv_1x7_7x1: {
      Var y = ctx.conv(op.convs[0], act());
      y = ctx.conv(op.convs[1], y);
      return ctx.batch_norm(op.norms[0], y);
    }
  }
  throw ConfigError("unknown op kind");
}

Var mixed_op_forward(const ForwardContext& ctx, std::span<const OpModule> ops, const Var& x, const Var& weights,
                     int row) {
  if (ops.size() != static_cast<std::size_t>(kNumOps)) throw ConfigError("mixed op needs one module per op kind");
  const Tensor& w = weights.value();
  if (w.rank() != 2 || w.dim(1) != kNumOps || row < 0 || row >= w.dim(0))
    throw InputError("mixed op: weights must be [E, " + std::to_string(kNumOps) + "]");
  std::vector<Var> terms(static_cast<std::size_t>(kNumOps));
  bool any = false;
  Var activated;
  for (int o = 0; o < kNumOps; ++o) {
    const OpModule& op = ops[static_cast<std::size_t>(o)];
    if (op.kind == OpKind::zero || w[static_cast<std::size_t>(row * kNumOps + o)] == 0.0) continue;
    const bool pools = op.kind == OpKind::max_pool_3x3 || op.kind == OpKind::avg_pool_3x3;
    const bool identity = op.kind == OpKind::skip_connect && op.stride == 1;
    if (!pools && !identity && !activated.valid()) activated = relu(x);
    terms[static_cast<std::size_t>(o)] = op_forward(ctx, op, x, activated);
    any = true;
  }
  if (!any) {
    // Only zero carries weight; the output is the zero tensor of the edge's shape.
    OpModule z;
    z.stride = ops[0].stride;
    return op_forward(ctx, z, x);
  }
  return weighted_sum(terms, weights, row);
}

namespace {

std::vector<Preprocess> make_pre(ParamStore& store, Rng& rng, const std::string& name, int c,
                                 std::span<const int> in_channels, std::span<const bool> in_reduce, bool affine) {
  std::vector<Preprocess> pre;
  for (std::size_t i = 0; i < in_channels.size(); ++i) {
    const int stride = (!in_reduce.empty() && in_reduce[i]) ? 2 : 1;
    const std::string n = name + ".pre" + std::to_string(i);
    pre.push_back({make_conv(store, rng, n + ".conv", in_channels[i], c, conv_geom(1, stride)),
                   make_batch_norm(store, n + ".bn", c, affine)});
  }
  return pre;
}

void check_inputs(const CellTemplate& t, std::span<const int> in_channels, std::span<const bool> in_reduce) {
  t.validate();
  if (static_cast<int>(in_channels.size()) != t.n_in) throw ConfigError("cell needs one channel count per input");
  if (!in_reduce.empty() && in_reduce.size() != in_channels.size()) throw ConfigError("in_reduce size mismatch");
}

}  // namespace

Cell make_relaxed_cell(ParamStore& store, Rng& rng, const std::string& name, const CellTemplate& t, bool reduction,
                       std::span<const int> in_channels, std::span<const bool> in_reduce, bool preprocess) {
  check_inputs(t, in_channels, in_reduce);
  Cell cell;
  cell.shape = t;
  cell.reduction = reduction;
  if (preprocess) cell.pre = make_pre(store, rng, name, t.node_width, in_channels, in_reduce, false);
  for (int k = 0; k < t.n_mid; ++k) {
    const int node = t.n_in + k;
    for (int src = 0; src < node; ++src) {
      const int stride = reduction && src < t.n_in ? 2 : 1;
      std::vector<OpModule> ops;
      for (OpKind kind : kAllOps)
        ops.push_back(make_op(store, rng, name + ".e" + std::to_string(t.edge_index(src, node)) + "." +
                                              std::string(op_name(kind)),
                              kind, t.node_width, stride, false, true));
      cell.mixed.push_back(std::move(ops));
    }
  }
  return cell;
}

Cell make_discrete_cell(ParamStore& store, Rng& rng, const std::string& name, const CellTemplate& t,
                        const CellGenotype& genotype, bool reduction, std::span<const int> in_channels,
                        std::span<const bool> in_reduce, bool preprocess) {
  check_inputs(t, in_channels, in_reduce);
  validate(genotype, t.n_in, t.m);
  if (static_cast<int>(genotype.nodes.size()) != t.n_mid) throw ConfigError("genotype node count differs from template");
  Cell cell;
  cell.shape = t;
  cell.reduction = reduction;
  if (preprocess) cell.pre = make_pre(store, rng, name, t.node_width, in_channels, in_reduce, true);
  for (int k = 0; k < t.n_mid; ++k) {
    const int node = t.n_in + k;
    for (const GenotypeEdge& e : genotype.nodes[static_cast<std::size_t>(k)]) {
      const int stride = reduction && e.src < t.n_in ? 2 : 1;
      cell.edges.push_back({node, e.src,
                            make_op(store, rng, name + ".n" + std::to_string(node) + ".s" + std::to_string(e.src),
                                    e.op, t.node_width, stride, true, false)});
    }
  }
  return cell;
}

std::vector<Var> cell_nodes(const ForwardContext& ctx, const Cell& cell, std::span<const Var> inputs,
                            const Var& weights) {
  const CellTemplate& t = cell.shape;
  if (static_cast<int>(inputs.size()) != t.n_in) throw ConfigError("cell expects " + std::to_string(t.n_in) + " inputs");
  if (cell.relaxed() && !weights.valid()) throw ConfigError("relaxed cell needs architecture weights");
  if (cell.relaxed() && (weights.value().rank() != 2 || weights.dim(0) != t.num_edges()))
    throw ConfigError("architecture weights do not match the cell template");
  std::vector<Var> states;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (cell.pre.empty()) {
      states.push_back(inputs[i]);
      continue;
    }
    states.push_back(ctx.batch_norm(cell.pre[i].norm, ctx.conv(cell.pre[i].conv, relu(inputs[i]))));
  }
  for (int k = 0; k < t.n_mid; ++k) {
    const int node = t.n_in + k;
    std::vector<Var> terms;
    if (cell.relaxed()) {
      for (int src = 0; src < node; ++src) {
        const int e = t.edge_index(src, node);
        terms.push_back(mixed_op_forward(ctx, cell.mixed[static_cast<std::size_t>(e)], states[static_cast<std::size_t>(src)],
                                         weights, e));
      }
    } else {
      for (const DiscreteEdge& e : cell.edges)
        if (e.node == node) terms.push_back(op_forward(ctx, e.op, states[static_cast<std::size_t>(e.src)]));
    }
    states.push_back(terms.size() == 1 ? terms[0] : add_n(terms));
  }
  return std::vector<Var>(states.begin() + t.n_in, states.end());
}

Var cell_forward(const ForwardContext& ctx, const Cell& cell, std::span<const Var> inputs, const Var& weights) {
  std::vector<Var> nodes = cell_nodes(ctx, cell, inputs, weights);
  return nodes.size() == 1 ? nodes[0] : concat_channels(nodes);
}

}  // namespace naslab
