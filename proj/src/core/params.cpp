#include "naslab/core/params.hpp"

#include <cmath>

#include "naslab/core/error.hpp"

namespace naslab {

int ParamStore::add(std::string name, ParamRole role, Tensor value) {
  params_.push_back(Param{std::move(name), role, std::move(value)});
  return static_cast<int>(params_.size()) - 1;
}

int ParamStore::add_buffer(std::string name, Tensor value) {
  buffer_names_.push_back(std::move(name));
  buffers_.push_back(std::move(value));
  return static_cast<int>(buffers_.size()) - 1;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.value.size();
  return n;
}

std::vector<double> ParamStore::flat() const {
  std::vector<double> out;
  out.reserve(num_scalars());
  for (const Param& p : params_) out.insert(out.end(), p.value.values().begin(), p.value.values().end());
  return out;
}

void ParamStore::set_flat(std::span<const double> values) {
  if (values.size() != num_scalars()) throw InputError("set_flat: expected " + std::to_string(num_scalars()) + " values");
  std::size_t off = 0;
  for (Param& p : params_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p.value.size(), p.value.data());
    off += p.value.size();
  }
}

bool ParamStore::all_finite() const {
  for (const Param& p : params_)
    if (!naslab::all_finite(p.value.values())) return false;
  return true;
}

Conv2dGeometry conv_geom(int kernel, int stride, int dilation, int groups) {
  const int pad = dilation * (kernel - 1) / 2;
  return Conv2dGeometry{kernel, kernel, stride, stride, pad, pad, dilation, groups};
}

ConvLayer make_conv(ParamStore& store, Rng& rng, const std::string& name, int cin, int cout,
                    const Conv2dGeometry& geom, bool bias) {
  if (cin % geom.groups != 0 || cout % geom.groups != 0) throw ConfigError(name + ": channels not divisible by groups");
  const int cin_g = cin / geom.groups;
  Tensor w({cout, cin_g, geom.kernel_h, geom.kernel_w});
  const double std = std::sqrt(2.0 / (cin_g * geom.kernel_h * geom.kernel_w));
  for (double& v : w.values()) v = rng.normal(0.0, std);
  ConvLayer layer;
  layer.geom = geom;
  layer.weight = store.add(name + ".weight", ParamRole::conv_weight, std::move(w));
  if (bias) layer.bias = store.add(name + ".bias", ParamRole::bias, Tensor({cout}));
  return layer;
}

BatchNormLayer make_batch_norm(ParamStore& store, const std::string& name, int channels, bool affine) {
  BatchNormLayer layer;
  if (affine) {
    layer.scale = store.add(name + ".scale", ParamRole::bn_scale, Tensor({channels}, 1.0));
    layer.shift = store.add(name + ".shift", ParamRole::bn_shift, Tensor({channels}));
  }
  layer.mean = store.add_buffer(name + ".running_mean", Tensor({channels}));
  layer.var = store.add_buffer(name + ".running_var", Tensor({channels}, 1.0));
  return layer;
}

DenseLayer make_dense(ParamStore& store, Rng& rng, const std::string& name, int in, int out) {
  Tensor w({out, in});
  const double std = std::sqrt(2.0 / in);
  for (double& v : w.values()) v = rng.normal(0.0, std);
  DenseLayer layer;
  layer.weight = store.add(name + ".weight", ParamRole::linear_weight, std::move(w));
  layer.bias = store.add(name + ".bias", ParamRole::bias, Tensor({out}));
  return layer;
}

namespace {
Var param_or_none(const ForwardContext& ctx, int index) {
  return index >= 0 ? ctx.params[static_cast<std::size_t>(index)] : Var();
}
}  // namespace

Var ForwardContext::conv(const ConvLayer& layer, const Var& x) const {
  return conv2d(x, param_or_none(*this, layer.weight), param_or_none(*this, layer.bias), layer.geom);
}

Var ForwardContext::batch_norm(const BatchNormLayer& layer, const Var& x) const {
  Tensor& mean = (*buffers)[static_cast<std::size_t>(layer.mean)];
  Tensor& var = (*buffers)[static_cast<std::size_t>(layer.var)];
  const bool write = update_buffers && mode == Mode::train;
  return naslab::batch_norm(x, param_or_none(*this, layer.scale), param_or_none(*this, layer.shift), mean, var, mode,
                            write ? &mean : nullptr, write ? &var : nullptr);
}

Var ForwardContext::dense(const DenseLayer& layer, const Var& x) const {
  return linear(x, param_or_none(*this, layer.weight), param_or_none(*this, layer.bias));
}

}  // namespace naslab
