#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "naslab/attacks/report.hpp"
#include "naslab/core/model.hpp"

namespace naslab {

// ---- loss contours ----

enum class ContourSpace { parameter, input };

std::string to_string(ContourSpace s);
ContourSpace parse_contour_space(const std::string& text);

struct ContourSpec {
  ContourSpace space = ContourSpace::parameter;
  int resolution = 41;
  double alpha_min = -1.0, alpha_max = 1.0;
  double beta_min = -1.0, beta_max = 1.0;
  std::uint64_t seed_d1 = 1;
  std::uint64_t seed_d2 = 2;
  /// Parameter space: inputs used for the loss at each grid cell.
  int max_samples = 256;

  void validate() const;
};

void to_json(nlohmann::json& j, const ContourSpec& s);
void from_json(const nlohmann::json& j, ContourSpec& s);

struct ContourGrid {
  ContourSpace space = ContourSpace::parameter;
  std::vector<double> alphas;
  std::vector<double> betas;
  std::uint64_t seed_d1 = 1;
  std::uint64_t seed_d2 = 2;
  /// Row-major: values[i * betas.size() + j] = Gamma(alphas[i], betas[j]). Non-finite cells hold +inf.
  std::vector<double> values;
  double baseline = 0.0;
  /// Cosine between the two directions after normalization.
  double direction_cosine = 0.0;
  std::string model_id;

  double at(std::size_t i, std::size_t j) const { return values[i * betas.size() + j]; }
};

void to_json(nlohmann::json& j, const ContourGrid& g);
void from_json(const nlohmann::json& j, ContourGrid& g);

/// Matrix CSV: header "alpha\beta,<betas...>", then one row per alpha.
std::string contour_to_csv(const ContourGrid& g);
/// Reads the matrix back; metadata other than the axes keeps its defaults.
ContourGrid contour_from_csv(const std::string& text);

/// Evenly spaced axis with lo + (hi - lo) * i / (n - 1).
std::vector<double> grid_axis(double lo, double hi, int n);

using FlatLoss = std::function<double(std::span<const double> point)>;

/// Gamma over center + a d1 + b d2. The (0, 0) cell is evaluated at `center` itself.
ContourGrid loss_contour(const FlatLoss& loss, std::span<const double> center, std::span<const double> d1,
                         std::span<const double> d2, const ContourSpec& spec);

/// Two unit-l2, mutually orthogonal Gaussian directions of length `dim`.
std::pair<std::vector<double>, std::vector<double>> orthonormal_directions(std::size_t dim, std::uint64_t seed1,
                                                                           std::uint64_t seed2);

/// Parameter-space directions: per output unit of every weight (conv filter, dense row), d2 is made
/// orthogonal to d1 and both are rescaled to the weight's own norm. Biases and batch-norm entries get 0.
std::pair<std::vector<double>, std::vector<double>> filter_normalized_directions(const ParamStore& store,
                                                                                 std::uint64_t seed1,
                                                                                 std::uint64_t seed2);

/// Mean eval-mode cross-entropy over `data` (first spec.max_samples rows) around the trained parameters.
ContourGrid parameter_contour(const Model& model, const Dataset& data, const ContourSpec& spec);
/// Cross-entropy of one input-label pair around x.
ContourGrid input_contour(const Model& model, const Tensor& x, int label, const ContourSpec& spec);

// ---- gradient variance ----

struct VarianceReport {
  std::string model_id;
  std::string phase;
  double variance = 0.0;
  int samples = 0;
  std::size_t dimension = 0;
  Mode mode = Mode::train;
};

void to_json(nlohmann::json& j, const VarianceReport& r);
void from_json(const nlohmann::json& j, VarianceReport& r);

/// mean_i ||g_i - g_bar||^2 for a set of flattened gradient vectors.
double gradient_variance(const std::vector<std::vector<double>>& grads);

/// Per-input (batch size one) gradients of the cross-entropy over every parameter. Train mode
/// normalizes each input with its own batch statistics; running buffers are left untouched.
VarianceReport gradient_variance(const Model& model, const Dataset& sample, const std::string& phase,
                                 Mode mode = Mode::train);

// ---- Lipschitz probe ----

/// Gradient of a scalar function at a flat point.
using FlatGrad = std::function<std::vector<double>(std::span<const double> point)>;

/// max over sampled pairs (p, p + radius u), u uniform on the sphere, of ||grad(p) - grad(p')|| / ||p - p'||.
double lipschitz_estimate(const FlatGrad& grad, const std::vector<std::vector<double>>& points, double radius,
                          int pairs_per_point, std::uint64_t seed);

/// Each row of `a` ([rows, n]) shifted to zero mean and scaled to unit l2 norm.
void weight_normalize_rows(Tensor& a);

struct RowNormReport {
  double max_row_l1 = 0.0;
  int n = 0;
  double sqrt_n = 0.0;
  double inv_sqrt_n = 0.0;
  /// max_row_l1 > 1/sqrt(n): the claimed bound does not hold for this matrix.
  bool exceeds_inv_sqrt_n = false;
};

/// Rows are the leading dimension; n is the row length.
RowNormReport row_norm_report(const Tensor& a);

struct LipschitzProbeConfig {
  int pairs_per_point = 4;
  double radius = 1e-3;
  std::uint64_t seed = 0;
};

struct LipschitzReport {
  double input_lipschitz = 0.0;
  double param_lipschitz = 0.0;
  /// "first_layer_bias" when the first parameter tensor has a bias, otherwise "all".
  std::string param_space;
  int input_dim = 0;
  /// input_lipschitz / param_lipschitz, against the reference 1/sqrt(input_dim).
  double ratio = 0.0;
  double claimed_ratio = 0.0;
  bool ratio_exceeds_claim = false;
  RowNormReport first_layer;
};

void to_json(nlohmann::json& j, const LipschitzReport& r);

/// Weight-normalizes the first layer of a copy of `model`, then estimates both constants on `x`.
LipschitzReport input_lipschitz_probe(const Model& model, const Tensor& x, std::span<const int> labels,
                                      const LipschitzProbeConfig& config);

// ---- convergence-gap probe ----

struct ConvergenceProbeConfig {
  /// Gradient Lipschitz constant: the largest curvature of the quadratic.
  double lipschitz = 1.0;
  /// Smallest curvature; the rest are spread evenly in between.
  double min_curvature = 0.1;
  int dimension = 4;
  double sigma2 = 0.0;
  /// One step size per step; the horizon T is its length.
  std::vector<double> step_sizes{1.0};
  double initial_distance = 1.0;
  int trials = 10000;
  /// One-sided normal quantile for the Monte-Carlo margin (2.326 for 99%).
  double z = 2.326;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ConvergenceProbeResult {
  double empirical_gap = 0.0;
  double standard_error = 0.0;
  double bound = 0.0;
  /// empirical_gap - z * standard_error <= bound.
  bool within_bound = true;
};

void to_json(nlohmann::json& j, const ConvergenceProbeResult& r);

/// (||theta0 - theta*||^2 + sigma^2 sum a_t^2) / sum (2 a_t - L a_t^2).
double convergence_bound(double lipschitz, double sigma2, std::span<const double> steps, double initial_distance);

/// SGD on 0.5 (theta - theta*)^T H (theta - theta*) with Gaussian gradient noise of total variance sigma2.
/// The output iterate (after step t_bar) is drawn with probability proportional to 2 a_t - L a_t^2.
ConvergenceProbeResult convergence_gap_probe(const ConvergenceProbeConfig& config);

// ---- overlap and aggregates ----

struct OverlapHistogram {
  /// counts[k - 1]: inputs attacked successfully against exactly k models.
  std::vector<int> counts;
  int none = 0;
};

void to_json(nlohmann::json& j, const OverlapHistogram& h);

OverlapHistogram vulnerability_overlap(const std::vector<AttackReport>& reports);

/// Aggregates derived again from the raw records, written separately from the attack module.
nlohmann::json recompute_aggregates(const AttackReport& report);

/// Names of aggregates whose stored value differs from the recomputed one (exact comparison).
std::vector<std::string> aggregate_mismatches(const AttackReport& report);

}  // namespace naslab
