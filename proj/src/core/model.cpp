#include "naslab/core/model.hpp"

#include <algorithm>

#include "naslab/core/error.hpp"

namespace naslab {

ForwardContext bind(Tape& tape, Model& model, Mode mode, bool param_grads, bool update_buffers) {
  ForwardContext ctx;
  ctx.tape = &tape;
  ctx.mode = mode;
  ctx.buffers = &model.store().buffers();
  ctx.update_buffers = update_buffers;
  for (const Param& p : model.store().params())
    ctx.params.push_back(param_grads ? tape.variable(p.value) : tape.constant(p.value));
  return ctx;
}

ForwardContext bind(Tape& tape, const Model& model, Mode mode) {
  // Buffers are only written when update_buffers is set, which this overload never does.
  return bind(tape, const_cast<Model&>(model), mode, false, false);
}

namespace {

template <typename Pick>
Tensor batched(const Model& model, const Tensor& x, int batch_size, Pick pick) {
  if (x.rank() != 4) throw InputError("expected an NCHW batch, got " + shape_string(x.shape()));
  const int n = x.dim(0);
  Tensor out;
  std::vector<double> values;
  int width = 0;
  for (int first = 0; first < n; first += batch_size) {
    const int count = std::min(batch_size, n - first);
    Tape tape;
    ForwardContext ctx = bind(tape, model, Mode::eval);
    ForwardResult r = model.forward(ctx, tape.constant(slice_rows(x, first, count)));
    const Tensor& part = pick(r).value();
    width = part.dim(1);
    values.insert(values.end(), part.values().begin(), part.values().end());
  }
  return Tensor({n, width}, std::move(values));
}

}  // namespace

Tensor predict_logits(const Model& model, const Tensor& x, int batch_size) {
  return batched(model, x, batch_size, [](const ForwardResult& r) { return r.logits; });
}

Tensor predict_proba(const Model& model, const Tensor& x, int batch_size) {
  return softmax_rows(predict_logits(model, x, batch_size));
}

std::vector<int> predict_labels(const Model& model, const Tensor& x, int batch_size) {
  return argmax_rows(predict_logits(model, x, batch_size));
}

Tensor extract_features(const Model& model, const Tensor& x, int batch_size) {
  return batched(model, x, batch_size, [](const ForwardResult& r) { return r.features; });
}

LossGrad loss_and_grads(Model& model, const Tensor& x, std::span<const int> labels, Mode mode, bool update_buffers) {
  Tape tape;
  ForwardContext ctx = bind(tape, model, mode, true, update_buffers);
  ForwardResult r = model.forward(ctx, tape.constant(x));
  Var loss = cross_entropy(r.logits, labels);
  tape.backward(loss);
  LossGrad out;
  out.loss = loss.value()[0];
  out.grads.reserve(ctx.params.size());
  for (const Var& p : ctx.params) out.grads.push_back(tape.grad(p));
  return out;
}

Tensor input_gradient(const Model& model, const Tensor& x, const LogitLoss& loss) {
  Tape tape;
  ForwardContext ctx = bind(tape, model, Mode::eval);
  Var input = tape.variable(x);
  ForwardResult r = model.forward(ctx, input);
  tape.backward(loss(r.logits));
  return tape.grad(input);
}

}  // namespace naslab
