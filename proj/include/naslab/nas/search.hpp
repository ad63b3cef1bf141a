#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "naslab/core/error.hpp"
#include "naslab/search_space/network.hpp"
#include "naslab/trainer/train.hpp"

namespace naslab {

struct SearchConfig {
  int epochs = 10;
  int batch_size = 32;
  /// Step size of the plain-SGD weight updates, inner unroll included.
  double w_lr = 0.025;
  /// Step size of plain gradient descent on the architecture logits.
  double arch_lr = 3.0;
  int n_step = 1;
  double skip_gamma = 1.0;
  std::uint64_t seed = 0;
  double val_split = 0.5;
  double grad_clip = 5.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SearchConfig& c);
void from_json(const nlohmann::json& j, SearchConfig& c);

struct Batch {
  Tensor x;
  std::vector<int> y;
};

/// Loss of `batch` with parameter leaves `theta` and architecture leaves `alpha` bound on `tape`.
using BilevelLoss =
    std::function<Var(Tape& tape, std::span<const Var> theta, std::span<const Var> alpha, const Batch& batch)>;

/// `steps` plain-SGD updates of a copy of theta on the training loss (alpha held fixed).
std::vector<Tensor> inner_unroll(const BilevelLoss& loss, std::vector<Tensor> theta, const std::vector<Tensor>& alpha,
                                 const Batch& trn, int steps, double lr);

struct ArchGradient {
  std::vector<Tensor> grad;
  double val_loss = 0.0;
};

/// First-order hypergradient: d L_val / d alpha at the unrolled theta, which is held fixed.
ArchGradient first_order_arch_gradient(const BilevelLoss& loss, const std::vector<Tensor>& theta,
                                       const std::vector<Tensor>& alpha, const Batch& trn, const Batch& val,
                                       int n_step, double inner_lr);

/// Cross-entropy of the supernet with theta and (normal, reduce) logits supplied as leaves.
/// Batch norm uses batch statistics and never touches the network's buffers.
BilevelLoss supernet_loss(const SuperNetwork& net);

/// n_step inner updates on a scratch copy of theta, then one descent step on alpha.
/// The network itself is not modified.
ArchParams arch_gradient_step(const SuperNetwork& net, const Batch& trn, const Batch& val, const SearchConfig& config,
                              double* val_loss = nullptr);

struct SearchEpoch {
  int epoch = 0;
  double val_loss = 0.0;
  /// Mean skip_connect logit over the normal cell's edges.
  double skip_logit_mean = 0.0;
  std::string genotype;
  /// Some skip logit is negative, where multiplying by gamma raises its weight.
  bool negative_skip_logits = false;
};

struct SearchTrace {
  std::vector<SearchEpoch> epochs;

  /// epoch,val_loss,skip_logit_mean,genotype_string
  std::string to_csv() const;
};

class SearchDiverged : public DivergenceError {
 public:
  SearchDiverged(const std::string& what, SearchTrace trace) : DivergenceError(what), trace_(std::move(trace)) {}
  const SearchTrace& trace() const noexcept { return trace_; }

 private:
  SearchTrace trace_;
};

struct SearchResult {
  Genotype genotype;
  SearchTrace trace;
  ArchParams arch;
};

/// Alternating bi-level search on a seeded train/validation split of `data`.
/// `arch` optionally seeds the logits (and masks); zeros otherwise.
SearchResult darts_search(const Dataset& data, const CellTemplate& cell, const NetworkTemplate& net,
                          const SearchConfig& config, const ArchParams* arch = nullptr);

struct RandomCandidate {
  Genotype genotype;
  double val_accuracy = 0.0;
};

struct RandomSearchResult {
  Genotype best;
  std::vector<RandomCandidate> candidates;
};

/// Samples `budget` genotypes, briefly trains each on data.train and keeps the best
/// accuracy on data.test. With budget 1 training is skipped.
RandomSearchResult random_search(const CellTemplate& cell, const NetworkTemplate& net, int budget, std::uint64_t seed,
                                 const DataSplit& data, const TrainConfig& brief);

}  // namespace naslab
