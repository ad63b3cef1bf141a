#include "naslab/search_space/network.hpp"

#include <algorithm>
#include <set>

#include "naslab/core/error.hpp"

namespace naslab {

std::vector<int> NetworkTemplate::reductions() const {
  if (!reduction_positions.empty()) return reduction_positions;
  std::set<int> pos{n_cells / 3, 2 * n_cells / 3};
  std::vector<int> out;
  for (int p : pos)
    if (p >= 0 && p < n_cells) out.push_back(p);
  return out;
}

void NetworkTemplate::validate() const {
  if (n_cells < 1) throw ConfigError("network template: n_cells must be >= 1");
  if (num_classes < 2) throw ConfigError("network template: num_classes must be >= 2");
  if (stem_width < 1 || stem_multiplier < 1) throw ConfigError("network template: widths must be positive");
  if (input.size() != 3) throw ConfigError("network template: input must be {C, H, W}");
  for (int p : reduction_positions)
    if (p < 0 || p >= n_cells) throw ConfigError("network template: reduction position outside the stack");
}

void CellStack::build(const CellTemplate& cell, const NetworkTemplate& net, Rng& rng, const CellFactory& factory) {
  net.validate();
  cell.validate();
  if (cell.n_in != 2) throw ConfigError("stacked networks feed each cell from the two previous cells (n_in = 2)");
  cell_template_ = cell;
  cell_template_.node_width = net.stem_width;
  net_ = net;
  num_classes_ = net.num_classes;
  input_shape_ = net.input;
  const int stem_c = net.stem_multiplier * net.stem_width;
  stem_conv_ = make_conv(store_, rng, "stem", net.input[0], stem_c, conv_geom(3));
  stem_norm_ = make_batch_norm(store_, "stem.bn", stem_c, true);
  const std::vector<int> red = net.reductions();
  int c_pp = stem_c, c_p = stem_c, c = net.stem_width;
  bool reduction_prev = false;
  for (int i = 0; i < net.n_cells; ++i) {
    const bool reduction = std::find(red.begin(), red.end(), i) != red.end();
    if (reduction) c *= 2;
    CellTemplate t = cell;
    t.node_width = c;
    const std::array<int, 2> in_c{c_pp, c_p};
    const std::array<bool, 2> in_r{reduction_prev, false};
    cells_.push_back(factory(rng, "cell" + std::to_string(i), t, reduction, in_c, in_r));
    reduction_prev = reduction;
    c_pp = c_p;
    c_p = t.n_mid * c;
  }
  classifier_ = make_dense(store_, rng, "classifier", c_p, net.num_classes);
}

Var CellStack::arch_weights(ForwardContext&, bool) const { return Var(); }

ForwardResult CellStack::forward(ForwardContext& ctx, const Var& x) const {
  if (x.value().rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != input_shape_)
    throw InputError("network input must be [N, " + shape_string(input_shape_) + "], got " + shape_string(x.shape()));
  Var s = ctx.batch_norm(stem_norm_, ctx.conv(stem_conv_, x));
  Var s0 = s, s1 = s;
  Var w_normal, w_reduce;
  for (const Cell& cell : cells_) {
    Var w;
    if (cell.relaxed()) {
      Var& cached = cell.reduction ? w_reduce : w_normal;
      if (!cached.valid()) cached = arch_weights(ctx, cell.reduction);
      w = cached;
    }
    const std::array<Var, 2> in{s0, s1};
    Var out = cell_forward(ctx, cell, in, w);
    s0 = s1;
    s1 = out;
  }
  Var features = global_avg_pool(s1);
  return {ctx.dense(classifier_, features), features};
}

SuperNetwork::SuperNetwork(const CellTemplate& cell, const NetworkTemplate& net, std::uint64_t seed) {
  Rng rng(seed);
  build(cell, net, rng, [this](Rng& r, const std::string& name, const CellTemplate& t, bool reduction,
                               std::span<const int> in_c, std::span<const bool> in_r) {
    return make_relaxed_cell(store_, r, name, t, reduction, in_c, in_r);
  });
  arch_ = ArchParams::zeros(cell);
}

std::string SuperNetwork::describe() const { return to_string(discretize(arch_, cell_template_)); }

Var SuperNetwork::arch_weights(ForwardContext& ctx, bool reduction) const {
  Var logits = reduction ? ctx.arch_reduce : ctx.arch_normal;
  if (!logits.valid()) logits = ctx.tape->constant(reduction ? arch_.reduce : arch_.normal);
  return softmax_rows(logits, reduction ? arch_.reduce_mask : arch_.normal_mask);
}

CellNetwork::CellNetwork(const Genotype& genotype, const CellTemplate& cell, const NetworkTemplate& net,
                         std::uint64_t seed)
    : genotype_(genotype) {
  validate(genotype, cell.m);
  if (genotype.n_in != cell.n_in) throw ConfigError("genotype n_in differs from the cell template");
  Rng rng(seed);
  build(cell, net, rng, [this](Rng& r, const std::string& name, const CellTemplate& t, bool reduction,
                               std::span<const int> in_c, std::span<const bool> in_r) {
    return make_discrete_cell(store_, r, name, t, reduction ? genotype_.reduce : genotype_.normal, reduction, in_c,
                              in_r);
  });
}

namespace {

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "-" : "") + std::to_string(v[i]);
  return s;
}

void check_input(const Shape& input, int num_classes) {
  if (input.size() != 3) throw ConfigError("input must be {C, H, W}");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

}  // namespace

ChainCNN::ChainCNN(std::vector<int> widths, int pool_every, int num_classes, Shape input, std::uint64_t seed)
    : widths_(std::move(widths)), pool_every_(pool_every) {
  check_input(input, num_classes);
  if (widths_.empty() || pool_every_ < 1) throw ConfigError("chain: need at least one layer and pool_every >= 1");
  num_classes_ = num_classes;
  input_shape_ = input;
  Rng rng(seed);
  int c = input[0];
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    convs_.push_back(make_conv(store_, rng, "conv" + std::to_string(i), c, widths_[i], conv_geom(3), true));
    c = widths_[i];
  }
  classifier_ = make_dense(store_, rng, "classifier", c, num_classes);
}

std::string ChainCNN::describe() const { return "chain:" + join(widths_) + "/pool" + std::to_string(pool_every_); }

ForwardResult ChainCNN::forward(ForwardContext& ctx, const Var& x) const {
  Var y = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    y = relu(ctx.conv(convs_[i], y));
    const bool last = i + 1 == convs_.size();
    if (!last && (i + 1) % static_cast<std::size_t>(pool_every_) == 0 && y.dim(2) >= 2 && y.dim(3) >= 2)
      y = max_pool2d(y, Pool2dGeometry{2, 2, 0});
  }
  Var features = global_avg_pool(y);
  return {ctx.dense(classifier_, features), features};
}

ResidualCNN::ResidualCNN(std::vector<int> widths, int num_classes, Shape input, std::uint64_t seed)
    : widths_(std::move(widths)) {
  check_input(input, num_classes);
  if (widths_.empty()) throw ConfigError("residual: need at least one stage");
  num_classes_ = num_classes;
  input_shape_ = input;
  Rng rng(seed);
  stem_ = make_conv(store_, rng, "stem", input[0], widths_[0], conv_geom(3));
  stem_bn_ = make_batch_norm(store_, "stem.bn", widths_[0], true);
  int c = widths_[0];
  for (std::size_t s = 0; s < widths_.size(); ++s) {
    const int stride = s == 0 ? 1 : 2;
    const int w = widths_[s];
    const std::string n = "block" + std::to_string(s);
    Block b;
    b.conv1 = make_conv(store_, rng, n + ".conv1", c, w, conv_geom(3, stride));
    b.bn1 = make_batch_norm(store_, n + ".bn1", w, true);
    b.conv2 = make_conv(store_, rng, n + ".conv2", w, w, conv_geom(3));
    b.bn2 = make_batch_norm(store_, n + ".bn2", w, true);
    b.project = stride != 1 || c != w;
    if (b.project) {
      b.shortcut = make_conv(store_, rng, n + ".short", c, w, conv_geom(1, stride));
      b.bn_short = make_batch_norm(store_, n + ".bn_short", w, true);
    }
    blocks_.push_back(b);
    c = w;
  }
  classifier_ = make_dense(store_, rng, "classifier", c, num_classes);
}

std::string ResidualCNN::describe() const { return "residual:" + join(widths_); }

ForwardResult ResidualCNN::forward(ForwardContext& ctx, const Var& x) const {
  Var y = relu(ctx.batch_norm(stem_bn_, ctx.conv(stem_, x)));
  for (const Block& b : blocks_) {
    Var h = relu(ctx.batch_norm(b.bn1, ctx.conv(b.conv1, y)));
    h = ctx.batch_norm(b.bn2, ctx.conv(b.conv2, h));
    Var sc = b.project ? ctx.batch_norm(b.bn_short, ctx.conv(b.shortcut, y)) : y;
    y = relu(add(h, sc));
  }
  Var features = global_avg_pool(y);
  return {ctx.dense(classifier_, features), features};
}

DenseCNN::DenseCNN(int growth, int layers_per_block, int blocks, int num_classes, Shape input, std::uint64_t seed)
    : growth_(growth), layers_per_block_(layers_per_block), blocks_(blocks) {
  check_input(input, num_classes);
  if (growth < 1 || layers_per_block < 1 || blocks < 1) throw ConfigError("dense: sizes must be positive");
  num_classes_ = num_classes;
  input_shape_ = input;
  Rng rng(seed);
  int c = 2 * growth;
  stem_ = make_conv(store_, rng, "stem", input[0], c, conv_geom(3));
  for (int b = 0; b < blocks; ++b) {
    std::vector<Unit> units;
    for (int l = 0; l < layers_per_block; ++l) {
      const std::string n = "block" + std::to_string(b) + ".layer" + std::to_string(l);
      units.push_back({make_batch_norm(store_, n + ".bn", c, true), make_conv(store_, rng, n + ".conv", c, growth, conv_geom(3))});
      c += growth;
    }
    block_units_.push_back(std::move(units));
    if (b + 1 < blocks) {
      const std::string n = "transition" + std::to_string(b);
      const int out = c / 2;
      transitions_.push_back({make_batch_norm(store_, n + ".bn", c, true), make_conv(store_, rng, n + ".conv", c, out, conv_geom(1))});
      c = out;
    }
  }
  final_bn_ = make_batch_norm(store_, "final.bn", c, true);
  classifier_ = make_dense(store_, rng, "classifier", c, num_classes);
}

std::string DenseCNN::describe() const {
  return "dense:g" + std::to_string(growth_) + "x" + std::to_string(layers_per_block_) + "x" + std::to_string(blocks_);
}

ForwardResult DenseCNN::forward(ForwardContext& ctx, const Var& x) const {
  Var y = ctx.conv(stem_, x);
  for (std::size_t b = 0; b < block_units_.size(); ++b) {
    for (const Unit& u : block_units_[b]) {
      Var h = ctx.conv(u.conv, relu(ctx.batch_norm(u.bn, y)));
      const std::array<Var, 2> parts{y, h};
      y = concat_channels(parts);
    }
    if (b < transitions_.size()) {
      const Unit& t = transitions_[b];
      y = ctx.conv(t.conv, relu(ctx.batch_norm(t.bn, y)));
      if (y.dim(2) >= 2 && y.dim(3) >= 2) y = avg_pool2d(y, Pool2dGeometry{2, 2, 0});
    }
  }
  Var features = global_avg_pool(relu(ctx.batch_norm(final_bn_, y)));
  return {ctx.dense(classifier_, features), features};
}

LinearModel::LinearModel(int num_classes, Shape input, std::uint64_t seed) {
  check_input(input, num_classes);
  num_classes_ = num_classes;
  input_shape_ = input;
  Rng rng(seed);
  classifier_ = make_dense(store_, rng, "classifier", static_cast<int>(shape_size(input)), num_classes);
}

ForwardResult LinearModel::forward(ForwardContext& ctx, const Var& x) const {
  Var features = flatten(x);
  return {ctx.dense(classifier_, features), features};
}

std::unique_ptr<Model> build_model(const ArchSpec& spec) {
  const NetworkTemplate& net = spec.network;
  if (spec.kind == "cell") {
    Genotype g = parse_genotype(spec.genotype, spec.cell.n_in, spec.cell.m);
    return std::make_unique<CellNetwork>(g, spec.cell, net, spec.init_seed);
  }
  if (spec.kind == "supernet") return std::make_unique<SuperNetwork>(spec.cell, net, spec.init_seed);
  if (spec.kind == "chain")
    return std::make_unique<ChainCNN>(spec.widths, spec.pool_every, net.num_classes, net.input, spec.init_seed);
  if (spec.kind == "residual")
    return std::make_unique<ResidualCNN>(spec.widths, net.num_classes, net.input, spec.init_seed);
  if (spec.kind == "dense")
    return std::make_unique<DenseCNN>(spec.growth, spec.layers_per_block, spec.blocks, net.num_classes, net.input,
                                      spec.init_seed);
  if (spec.kind == "linear") return std::make_unique<LinearModel>(net.num_classes, net.input, spec.init_seed);
  throw ConfigError("unknown architecture kind '" + spec.kind + "'");
}

void to_json(nlohmann::json& j, const CellTemplate& t) {
  j = {{"n_in", t.n_in}, {"n_mid", t.n_mid}, {"n_out", t.n_out}, {"m", t.m}, {"node_width", t.node_width}};
}

void from_json(const nlohmann::json& j, CellTemplate& t) {
  t.n_in = j.value("n_in", t.n_in);
  t.n_mid = j.value("n_mid", t.n_mid);
  t.n_out = j.value("n_out", t.n_out);
  t.m = j.value("m", t.m);
  t.node_width = j.value("node_width", t.node_width);
}

void to_json(nlohmann::json& j, const NetworkTemplate& t) {
  j = {{"n_cells", t.n_cells},         {"reduction_positions", t.reduction_positions},
       {"stem_width", t.stem_width},   {"stem_multiplier", t.stem_multiplier},
       {"num_classes", t.num_classes}, {"input", t.input}};
}

void from_json(const nlohmann::json& j, NetworkTemplate& t) {
  t.n_cells = j.value("n_cells", t.n_cells);
  t.reduction_positions = j.value("reduction_positions", t.reduction_positions);
  t.stem_width = j.value("stem_width", t.stem_width);
  t.stem_multiplier = j.value("stem_multiplier", t.stem_multiplier);
  t.num_classes = j.value("num_classes", t.num_classes);
  t.input = j.value("input", t.input);
}

void to_json(nlohmann::json& j, const ArchSpec& s) {
  j = {{"kind", s.kind},     {"genotype", s.genotype}, {"cell", s.cell},           {"network", s.network},
       {"widths", s.widths}, {"pool_every", s.pool_every}, {"growth", s.growth}, {"layers_per_block", s.layers_per_block},
       {"blocks", s.blocks}, {"init_seed", s.init_seed}};
}

void from_json(const nlohmann::json& j, ArchSpec& s) {
  s.kind = j.value("kind", s.kind);
  s.genotype = j.value("genotype", s.genotype);
  if (j.contains("cell")) s.cell = j.at("cell").get<CellTemplate>();
  if (j.contains("network")) s.network = j.at("network").get<NetworkTemplate>();
  s.widths = j.value("widths", s.widths);
  s.pool_every = j.value("pool_every", s.pool_every);
  s.growth = j.value("growth", s.growth);
  s.layers_per_block = j.value("layers_per_block", s.layers_per_block);
  s.blocks = j.value("blocks", s.blocks);
  s.init_seed = j.value("init_seed", s.init_seed);
}

}  // namespace naslab
