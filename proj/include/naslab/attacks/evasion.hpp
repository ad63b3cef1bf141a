#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "naslab/attacks/report.hpp"
#include "naslab/core/model.hpp"

namespace naslab {

/// most_likely aims at c2, the runner-up class; least_likely at c_m, the lowest-ranked one.
enum class TargetMode { untargeted, most_likely, least_likely };

struct EvasionConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int max_iters = 7;
  int restarts = 5;
  TargetMode target_mode = TargetMode::untargeted;
  /// Freeze an input at the first iterate meeting the goal.
  bool stop_on_success = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// Table defaults: 3 iterations against c2, 7 against c_m.
  static EvasionConfig most_likely();
  static EvasionConfig least_likely();
};

std::string to_string(TargetMode mode);
TargetMode parse_target_mode(const std::string& text);
void to_json(nlohmann::json& j, const EvasionConfig& c);
void from_json(const nlohmann::json& j, EvasionConfig& c);

/// Target classes from the clean logits ranking (labels returned unchanged when untargeted).
std::vector<int> select_targets(const Tensor& logits, std::span<const int> labels, TargetMode mode);

struct EvasionResult {
  Tensor adversarial;
  /// Goal class per input: the true label when untargeted.
  std::vector<int> goals;
  std::vector<bool> success;
  std::vector<int> predicted;
};

/// Untargeted: ascend the true-label cross-entropy, success = prediction differs from the label.
/// Targeted: descend the target cross-entropy, success = prediction equals the target.
/// Random start in the epsilon ball for every restart; outputs stay in the ball and in [0, 1].
EvasionResult pgd_attack(const Model& model, const Tensor& x, std::span<const int> labels, const EvasionConfig& config);

/// Scores a batch [K, ...] of query points with one scalar each.
using BatchScalarFn = std::function<std::vector<double>(const Tensor& batch)>;
/// Class probabilities [K, m] for a batch of queries.
using ProbabilityOracle = std::function<Tensor(const Tensor& batch)>;

/// Antithetic Gaussian estimate (1 / (sigma n)) sum_j (f(x + sigma u_j) - f(x - sigma u_j)) u_j
/// with n/2 directions, n = n_query. `x` is a single point of any shape.
Tensor nes_gradient(const BatchScalarFn& f, const Tensor& x, int n_query, double sigma, Rng& rng);

struct NesConfig {
  int n_query = 400;
  /// 0.001 of the [0, 1] input range.
  double sigma = 0.001;
  /// Total oracle queries allowed per input, 0 for unlimited.
  long max_queries = 0;
};

struct NesResult {
  Tensor adversarial;
  bool success = false;
  int goal = 0;
  long queries = 0;
  bool budget_exhausted = false;
};

/// Black-box PGD driven by NES gradient estimates of the cross-entropy computed from oracle probabilities.
/// `x` is one sample [1, C, H, W]; target selection uses the oracle's clean ranking.
NesResult nes_attack(const ProbabilityOracle& oracle, const Tensor& x, int label, const EvasionConfig& config,
                     const NesConfig& nes);

/// Runs pgd_attack and packages per-input records (aux = l-inf distance actually used).
AttackReport evasion_report(const Model& model, const Tensor& x, std::span<const int> labels,
                            std::span<const int> input_ids, const EvasionConfig& config, EvasionResult* result = nullptr);

}  // namespace naslab
