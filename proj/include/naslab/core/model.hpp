#pragma once

#include <functional>
#include <memory>
#include <string>

#include "naslab/core/dataset.hpp"
#include "naslab/core/params.hpp"

namespace naslab {

struct ForwardResult {
  Var logits;
  /// Penultimate activations [N, F] feeding the classifier.
  Var features;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual std::unique_ptr<Model> clone() const = 0;
  /// Short family name, e.g. "cell" or "chain".
  virtual std::string kind() const = 0;
  /// Architecture identity: genotype text for cell models, a name otherwise.
  virtual std::string describe() const = 0;
  virtual ForwardResult forward(ForwardContext& ctx, const Var& x) const = 0;

  ParamStore& store() noexcept { return store_; }
  const ParamStore& store() const noexcept { return store_; }
  const DenseLayer& classifier() const noexcept { return classifier_; }
  int num_classes() const noexcept { return num_classes_; }
  /// Input sample shape {C, H, W}.
  const Shape& input_shape() const noexcept { return input_shape_; }

 protected:
  ParamStore store_;
  DenseLayer classifier_;
  int num_classes_ = 0;
  Shape input_shape_;
};

/// Binds the model's parameters to `tape`. With `param_grads` they become
/// gradient-tracked leaves; `update_buffers` lets train-mode batch norm write
/// running statistics back into the model.
ForwardContext bind(Tape& tape, Model& model, Mode mode, bool param_grads, bool update_buffers);
ForwardContext bind(Tape& tape, const Model& model, Mode mode);

Tensor predict_logits(const Model& model, const Tensor& x, int batch_size = 256);
Tensor predict_proba(const Model& model, const Tensor& x, int batch_size = 256);
std::vector<int> predict_labels(const Model& model, const Tensor& x, int batch_size = 256);
Tensor extract_features(const Model& model, const Tensor& x, int batch_size = 256);

struct LossGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

/// Mean cross-entropy and its gradient with respect to every parameter.
LossGrad loss_and_grads(Model& model, const Tensor& x, std::span<const int> labels, Mode mode,
                        bool update_buffers);

using LogitLoss = std::function<Var(const Var& logits)>;
/// Gradient of `loss(logits)` with respect to the input batch, eval mode.
Tensor input_gradient(const Model& model, const Tensor& x, const LogitLoss& loss);

}  // namespace naslab
