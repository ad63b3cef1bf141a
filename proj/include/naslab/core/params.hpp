#pragma once

#include <string>
#include <vector>

#include "naslab/core/ops.hpp"
#include "naslab/core/rng.hpp"

namespace naslab {

enum class ParamRole { conv_weight, linear_weight, bias, bn_scale, bn_shift };

struct Param {
  std::string name;
  ParamRole role;
  Tensor value;
};

/// Trainable tensors plus non-trainable buffers (batch-norm running statistics).
class ParamStore {
 public:
  int add(std::string name, ParamRole role, Tensor value);
  int add_buffer(std::string name, Tensor value);

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::vector<Tensor>& buffers() noexcept { return buffers_; }
  const std::vector<Tensor>& buffers() const noexcept { return buffers_; }
  const std::vector<std::string>& buffer_names() const noexcept { return buffer_names_; }

  /// Total number of trainable scalars.
  std::size_t num_scalars() const;
  std::vector<double> flat() const;
  void set_flat(std::span<const double> values);
  bool all_finite() const;

 private:
  std::vector<Param> params_;
  std::vector<Tensor> buffers_;
  std::vector<std::string> buffer_names_;
};

struct ConvLayer {
  int weight = -1;
  int bias = -1;
  Conv2dGeometry geom;
};

struct BatchNormLayer {
  int scale = -1;
  int shift = -1;
  int mean = -1;
  int var = -1;
};

struct DenseLayer {
  int weight = -1;
  int bias = -1;
};

/// Kaiming-normal weights (std = sqrt(2 / fan_in)); zero bias.
ConvLayer make_conv(ParamStore& store, Rng& rng, const std::string& name, int cin, int cout,
                    const Conv2dGeometry& geom, bool bias = false);
BatchNormLayer make_batch_norm(ParamStore& store, const std::string& name, int channels, bool affine);
DenseLayer make_dense(ParamStore& store, Rng& rng, const std::string& name, int in, int out);

/// Geometry of a square same-padding convolution.
Conv2dGeometry conv_geom(int kernel, int stride = 1, int dilation = 1, int groups = 1);

/// Parameters bound to a tape for one forward pass.
struct ForwardContext {
  Tape* tape = nullptr;
  std::vector<Var> params;
  std::vector<Tensor>* buffers = nullptr;
  bool update_buffers = false;
  Mode mode = Mode::eval;
  // Architecture logits, used only by relaxed networks.
  Var arch_normal;
  Var arch_reduce;

  Var conv(const ConvLayer& layer, const Var& x) const;
  Var batch_norm(const BatchNormLayer& layer, const Var& x) const;
  Var dense(const DenseLayer& layer, const Var& x) const;
};

}  // namespace naslab
