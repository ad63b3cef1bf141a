#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "json.hpp"
#include "naslab/attacks/report.hpp"
#include "naslab/core/model.hpp"
#include "naslab/trainer/train.hpp"

namespace naslab {

struct BackdoorConfig {
  int trigger_size = 3;
  /// gamma_t: weight kept from the clean pixel inside the patch.
  double transparency = 0.7;
  int n_neuron = 2;
  double preprocess_lr = 0.015;
  int preprocess_iters = 20;
  /// Clean inputs used to optimize the trigger.
  int preprocess_batch = 128;
  int target_class = 0;
  /// Weight of the trigger-embedded term in the fine-tuning loss.
  double lambda = 1.0;
  TrainConfig finetune{.epochs = 10, .initial_lr = 0.01};
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const BackdoorConfig& c);
void from_json(const nlohmann::json& j, BackdoorConfig& c);

/// Patch origin (row, col): bottom-right corner.
std::pair<int, int> trigger_origin(const Shape& sample_shape, int trigger_size);

/// x' = gamma_t x + (1 - gamma_t) r on the patch, x elsewhere. `trigger` is [C, s, s].
Tensor embed_trigger(const Tensor& x, const Tensor& trigger, const BackdoorConfig& config);

/// Penultimate units with the largest |weight| into the target logit, ties to the lower index.
std::vector<int> select_target_neurons(const Model& model, int target_class, int n_neuron);

/// Sign-gradient ascent on the mean activation of `neurons`, trigger kept in [0, 1].
Tensor optimize_trigger(const Model& model, const Tensor& x, std::span<const int> neurons,
                        const BackdoorConfig& config);

struct BackdoorResult {
  std::unique_ptr<Model> model;
  Tensor trigger;
  std::vector<int> neurons;
  std::vector<EpochStats> history;
  AttackReport report;
};

/// Optimizes a trigger against `clean`, fine-tunes a copy on clean plus trigger-relabelled batches
/// and reports ASR over every trigger-embedded test input and CAD on the clean test inputs.
BackdoorResult trojannn_inject(const Model& clean, const DataSplit& data, const BackdoorConfig& config);

/// Records for a trojaned model: "trigger" group (success = prediction equals the target) and
/// "clean" group (success = trojan correct, aux = clean model correct).
AttackReport backdoor_report(const Model& clean, const Model& trojan, const Dataset& test, const Tensor& trigger,
                             const BackdoorConfig& config);

}  // namespace naslab
