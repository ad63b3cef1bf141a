#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "naslab/attacks/evasion.hpp"
#include "naslab/attacks/report.hpp"
#include "naslab/trainer/train.hpp"

namespace naslab {

enum class QueryStrategy { random, adaptive };

struct StealConfig {
  long query_budget = 2000;
  QueryStrategy strategy = QueryStrategy::random;
  ArchSpec surrogate;
  /// Replicate training; the epoch count defaults to 50.
  TrainConfig train{.epochs = 50};
  /// Adaptive: the budget is spent over this many rounds, retraining the replicate in between.
  int adaptive_rounds = 4;
  /// Adaptive rewards: certainty, diversity and loss, combined with equal weights by default.
  double w_certainty = 1.0;
  double w_diversity = 1.0;
  double w_loss = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

std::string to_string(QueryStrategy s);
QueryStrategy parse_query_strategy(const std::string& text);
void to_json(nlohmann::json& j, const StealConfig& c);
void from_json(const nlohmann::json& j, StealConfig& c);

/// Per-row cross-entropy -sum_k p_victim log p_replicate.
std::vector<double> row_cross_entropy(const Tensor& victim_probs, const Tensor& replicate_probs);

struct StealResult {
  std::unique_ptr<Model> replicate;
  /// Indices into the attacker pool, in query order (may repeat once the pool is exhausted).
  std::vector<int> queried;
  double ace = 0.0;
  /// Records on the test inputs, aux = per-input cross-entropy.
  AttackReport report;
};

/// Builds the query set from `pool` through `victim`, trains the replicate on the soft answers and
/// scores ACE on `test_images`. Test-set queries are evaluation only and not charged to the budget.
StealResult knockoff_steal(const ProbabilityOracle& victim, const Tensor& pool, const Tensor& test_images,
                           const StealConfig& config);

/// ACE report for an existing replicate.
AttackReport knockoff_report(const Tensor& victim_probs, const Model& replicate, const Tensor& test_images,
                             const StealConfig& config);

}  // namespace naslab
