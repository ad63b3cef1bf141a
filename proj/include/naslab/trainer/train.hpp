#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "naslab/core/error.hpp"
#include "naslab/core/model.hpp"
#include "naslab/search_space/network.hpp"

namespace naslab {

struct EvasionConfig;

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double initial_lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  bool random_flip = false;
  bool random_crop = false;
  int crop_pad = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Cosine annealing from initial_lr at step 0 to 0 at step total_steps - 1.
double cosine_lr(double initial_lr, int step, int total_steps);

/// Rescales `grads` in place so their joint l2 norm is at most `max_norm`; returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

/// SGD with momentum and coupled weight decay: v = mu v + (g + wd theta); theta -= lr v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ParamStore& store, const std::vector<Tensor>& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  /// Learning rate of the epoch's last step.
  double lr = 0.0;
};

/// Raised when a loss turns non-finite; carries the parameters from the start of the failing epoch.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(const std::string& what, int epoch, std::vector<double> last_good)
      : DivergenceError(what), epoch_(epoch), last_good_(std::move(last_good)) {}
  int epoch() const noexcept { return epoch_; }
  const std::vector<double>& last_checkpoint() const noexcept { return last_good_; }

 private:
  int epoch_;
  std::vector<double> last_good_;
};

/// Replaces a training minibatch before the parameter step (adversarial training hooks in here).
using BatchTransform =
    std::function<Tensor(const Model& model, const Tensor& x, std::span<const int> labels, int step)>;

/// Optional extra loss term added per step (used by backdoor fine-tuning).
struct TrainHooks {
  BatchTransform transform;
  /// Called once per step with the step index; returns a second batch that shares the forward pass
  /// with the minibatch. Its mean loss is added with weight `extra_weight`.
  std::function<Dataset(int step)> extra_batch;
  double extra_weight = 1.0;
};

/// Runs the optimizer over `train` in place. Deterministic given config.seed.
std::vector<EpochStats> fit(Model& model, const Dataset& train, const TrainConfig& config,
                            const TrainHooks& hooks = {});

/// Same optimizer on soft targets [N, classes] with the soft cross-entropy.
std::vector<EpochStats> fit_soft(Model& model, const Tensor& images, const Tensor& targets, const TrainConfig& config);

struct TrainedModel {
  std::unique_ptr<Model> model;
  ArchSpec arch;
  TrainConfig config;
  std::string fingerprint;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<EpochStats> history;
  /// Free-form provenance, e.g. poisoning rate or adversarial-training settings.
  nlohmann::json notes = nlohmann::json::object();

  TrainedModel() = default;
  TrainedModel(const TrainedModel& other);
  TrainedModel& operator=(const TrainedModel& other);
  TrainedModel(TrainedModel&&) = default;
  TrainedModel& operator=(TrainedModel&&) = default;
};

TrainedModel train_model(const ArchSpec& arch, const DataSplit& data, const TrainConfig& config);

/// Each minibatch is swapped for untargeted PGD examples against the current parameters.
TrainedModel adversarial_train(const ArchSpec& arch, const DataSplit& data, const TrainConfig& config,
                               const EvasionConfig& evasion);

/// Relabels a uniformly chosen floor(p_pos * N) subset of the training split to a different, uniformly drawn class.
DataSplit poison_labels(const DataSplit& data, double p_pos, std::uint64_t seed);

/// Fraction of argmax-correct predictions.
double evaluate_accuracy(const Model& model, const Dataset& data);

/// Writes `<prefix>.bin` (raw little-endian doubles: parameters, then buffers) and `<prefix>.json`.
void save_checkpoint(const TrainedModel& tm, const std::string& prefix);
/// Rebuilds the model and verifies the blob hash recorded in the sidecar (IntegrityError on mismatch).
TrainedModel load_checkpoint(const std::string& prefix);

}  // namespace naslab
