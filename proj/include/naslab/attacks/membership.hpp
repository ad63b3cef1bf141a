#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "naslab/attacks/report.hpp"
#include "naslab/core/model.hpp"

namespace naslab {

struct MembershipConfig {
  std::string norm = "l2";
  int max_iters = 50;
  /// Oracle queries per input, initialization and bisections included.
  long max_evals = 2500;
  /// Boundary-normal samples at iteration t: init_evals * sqrt(t).
  int init_evals = 100;
  /// Random uniform probes tried when looking for a misclassified starting point.
  int init_size = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const MembershipConfig& c);
void from_json(const nlohmann::json& j, MembershipConfig& c);

/// Top-1 labels for a batch of queries.
using LabelOracle = std::function<std::vector<int>(const Tensor& batch)>;

LabelOracle label_oracle(const Model& model);

struct HsjResult {
  /// l2 distance from x to the best boundary point; +inf when no misclassified probe was found.
  double distance = 0.0;
  bool found = true;
  long queries = 0;
  /// Best distance after initialization and after each iteration.
  std::vector<double> trace;
  Tensor boundary;
};

/// Label-only boundary walk. `x` is one sample [1, C, H, W]; queries stay in [0, 1].
HsjResult hopskipjump(const LabelOracle& oracle, const Tensor& x, int label, const MembershipConfig& config);

double hopskipjump_distance(const LabelOracle& oracle, const Tensor& x, int label, const MembershipConfig& config);

struct MembershipResult {
  double auc = 0.5;
  std::vector<double> member_distances;
  std::vector<double> nonmember_distances;
  AttackReport report;
};

/// Larger distance scores membership; AUC over finite distances, infinite ones counted separately.
MembershipResult membership_infer(const Model& model, const Dataset& members, const Dataset& nonmembers,
                                  const MembershipConfig& config);

}  // namespace naslab
