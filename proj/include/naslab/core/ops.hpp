#pragma once

#include <optional>
#include <span>
#include <vector>

#include "naslab/core/autograd.hpp"

namespace naslab {

struct Conv2dGeometry {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 1;
  int pad_w = 1;
  int dilation = 1;
  int groups = 1;

  int out_h(int h) const { return (h + 2 * pad_h - dilation * (kernel_h - 1) - 1) / stride_h + 1; }
  int out_w(int w) const { return (w + 2 * pad_w - dilation * (kernel_w - 1) - 1) / stride_w + 1; }
};

struct Pool2dGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
};

enum class Mode { train, eval };

Var add(const Var& a, const Var& b);
Var add_n(std::span<const Var> terms);
Var scale(const Var& a, double factor);
/// Elementwise product of equal shapes.
Var mul(const Var& a, const Var& b);
Var relu(const Var& x);

/// x: [N, Cin, H, W], weight: [Cout, Cin / groups, kh, kw], bias: [Cout] or invalid.
Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dGeometry& geom);

/// Per-channel normalization over (N, H, W). In train mode batch statistics are
/// used and `running_*` (if non-null) are updated with `momentum`; in eval mode
/// the running statistics are used. `scale`/`shift` may be invalid (affine-free).
Var batch_norm(const Var& x, const Var& scale, const Var& shift, const Tensor& running_mean,
               const Tensor& running_var, Mode mode, Tensor* update_mean, Tensor* update_var,
               double momentum = 0.1, double eps = 1e-5);

Var max_pool2d(const Var& x, const Pool2dGeometry& geom);
/// Padding cells are excluded from the average.
Var avg_pool2d(const Var& x, const Pool2dGeometry& geom);
/// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);
/// x: [N, F], weight: [Out, F], bias: [Out] or invalid.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Flattens everything after the leading axis.
Var flatten(const Var& x);
Var concat_channels(std::span<const Var> parts);

/// Row-wise softmax of [R, K]. Masked-out entries get weight 0; the mask has
/// either K entries (shared by all rows) or R*K entries.
Var softmax_rows(const Var& logits, const std::vector<bool>& mask = {});
/// sum_k weights[row, k] * terms[k]; invalid terms contribute nothing.
Var weighted_sum(std::span<const Var> terms, const Var& weights, int row);

/// Mean cross-entropy of logits [N, K] against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);
/// Mean of -sum_k target[n,k] * log softmax(logits)[n,k].
Var soft_cross_entropy(const Var& logits, const Tensor& target_probs);
/// Mean over rows and the listed columns of x: [N, F].
Var mean_of_columns(const Var& x, std::span<const int> columns);
/// Replaces the patch at (row0, col0) of every image with keep * x + (1 - keep) * patch.
/// patch: [C, ph, pw].
Var blend_patch(const Var& x, const Var& patch, int row0, int col0, double keep);

/// Sum of all elements as a [1] tensor.
Var sum(const Var& x);

// Non-differentiable helpers on plain tensors.
Tensor softmax_rows(const Tensor& logits);
std::vector<int> argmax_rows(const Tensor& scores);

}  // namespace naslab
