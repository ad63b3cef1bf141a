#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "json.hpp"
#include "naslab/core/model.hpp"
#include "naslab/search_space/cell.hpp"

namespace naslab {

struct NetworkTemplate {
  int n_cells = 5;
  /// Empty means the thirds of the stack.
  std::vector<int> reduction_positions;
  /// Channels c of the first cell's nodes; the stem emits stem_multiplier * c.
  int stem_width = 8;
  int stem_multiplier = 3;
  int num_classes = 10;
  /// {C, H, W}
  Shape input{3, 16, 16};

  std::vector<int> reductions() const;
  void validate() const;
};

/// Stem, stacked cells, global pooling and a linear classifier.
class CellStack : public Model {
 public:
  ForwardResult forward(ForwardContext& ctx, const Var& x) const override;
  const std::vector<Cell>& cells() const noexcept { return cells_; }
  const CellTemplate& cell_template() const noexcept { return cell_template_; }
  const NetworkTemplate& network_template() const noexcept { return net_; }

 protected:
  using CellFactory = std::function<Cell(Rng&, const std::string&, const CellTemplate&, bool, std::span<const int>,
                                         std::span<const bool>)>;
  void build(const CellTemplate& cell, const NetworkTemplate& net, Rng& rng, const CellFactory& factory);
  virtual Var arch_weights(ForwardContext& ctx, bool reduction) const;

  CellTemplate cell_template_;
  NetworkTemplate net_;
  ConvLayer stem_conv_;
  BatchNormLayer stem_norm_;
  std::vector<Cell> cells_;
};

/// Relaxed network: every edge holds every candidate op, mixed by softmax(alpha).
class SuperNetwork : public CellStack {
 public:
  SuperNetwork(const CellTemplate& cell, const NetworkTemplate& net, std::uint64_t seed);

  std::unique_ptr<Model> clone() const override { return std::make_unique<SuperNetwork>(*this); }
  std::string kind() const override { return "supernet"; }
  std::string describe() const override;

  ArchParams& arch() noexcept { return arch_; }
  const ArchParams& arch() const noexcept { return arch_; }

 protected:
  /// Uses ctx.arch_normal / ctx.arch_reduce when bound, the stored logits otherwise.
  Var arch_weights(ForwardContext& ctx, bool reduction) const override;

 private:
  ArchParams arch_;
};

class CellNetwork : public CellStack {
 public:
  CellNetwork(const Genotype& genotype, const CellTemplate& cell, const NetworkTemplate& net, std::uint64_t seed);

  std::unique_ptr<Model> clone() const override { return std::make_unique<CellNetwork>(*this); }
  std::string kind() const override { return "cell"; }
  std::string describe() const override { return to_string(genotype_); }
  const Genotype& genotype() const noexcept { return genotype_; }

 private:
  Genotype genotype_;
};

/// VGG-style plain chain: conv3x3(+bias) -> ReLU layers, 2x2 max pooling after every
/// `pool_every` layers, global pooling and a linear head.
class ChainCNN : public Model {
 public:
  ChainCNN(std::vector<int> widths, int pool_every, int num_classes, Shape input, std::uint64_t seed);
  std::unique_ptr<Model> clone() const override { return std::make_unique<ChainCNN>(*this); }
  std::string kind() const override { return "chain"; }
  std::string describe() const override;
  ForwardResult forward(ForwardContext& ctx, const Var& x) const override;

 private:
  std::vector<int> widths_;
  int pool_every_;
  std::vector<ConvLayer> convs_;
};

/// Stem plus one basic residual block per stage; stages after the first halve the resolution.
class ResidualCNN : public Model {
 public:
  ResidualCNN(std::vector<int> widths, int num_classes, Shape input, std::uint64_t seed);
  std::unique_ptr<Model> clone() const override { return std::make_unique<ResidualCNN>(*this); }
  std::string kind() const override { return "residual"; }
  std::string describe() const override;
  ForwardResult forward(ForwardContext& ctx, const Var& x) const override;

 private:
  struct Block {
    ConvLayer conv1, conv2, shortcut;
    BatchNormLayer bn1, bn2, bn_short;
    bool project = false;
  };
  std::vector<int> widths_;
  ConvLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<Block> blocks_;
};

/// Dense blocks (BN-ReLU-conv3x3, concatenated growth) joined by 1x1 transitions and 2x2 average pooling.
class DenseCNN : public Model {
 public:
  DenseCNN(int growth, int layers_per_block, int blocks, int num_classes, Shape input, std::uint64_t seed);
  std::unique_ptr<Model> clone() const override { return std::make_unique<DenseCNN>(*this); }
  std::string kind() const override { return "dense"; }
  std::string describe() const override;
  ForwardResult forward(ForwardContext& ctx, const Var& x) const override;

 private:
  struct Unit {
    BatchNormLayer bn;
    ConvLayer conv;
  };
  int growth_, layers_per_block_, blocks_;
  ConvLayer stem_;
  std::vector<std::vector<Unit>> block_units_;
  std::vector<Unit> transitions_;
  BatchNormLayer final_bn_;
};

/// Multinomial logistic regression on the flattened input; features are the flattened input.
class LinearModel : public Model {
 public:
  LinearModel(int num_classes, Shape input, std::uint64_t seed);
  std::unique_ptr<Model> clone() const override { return std::make_unique<LinearModel>(*this); }
  std::string kind() const override { return "linear"; }
  std::string describe() const override { return "linear"; }
  ForwardResult forward(ForwardContext& ctx, const Var& x) const override;
};

/// Everything needed to rebuild a model's structure (weights come from checkpoints).
struct ArchSpec {
  std::string kind = "cell";  // cell | supernet | chain | residual | dense | linear
  std::string genotype;
  CellTemplate cell;
  NetworkTemplate network;
  std::vector<int> widths{16, 16, 32, 32, 64};
  int pool_every = 2;
  int growth = 12;
  int layers_per_block = 4;
  int blocks = 3;
  std::uint64_t init_seed = 0;
};

std::unique_ptr<Model> build_model(const ArchSpec& spec);

void to_json(nlohmann::json& j, const CellTemplate& t);
void from_json(const nlohmann::json& j, CellTemplate& t);
void to_json(nlohmann::json& j, const NetworkTemplate& t);
void from_json(const nlohmann::json& j, NetworkTemplate& t);
void to_json(nlohmann::json& j, const ArchSpec& s);
void from_json(const nlohmann::json& j, ArchSpec& s);

}  // namespace naslab
