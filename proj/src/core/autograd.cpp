#include "naslab/core/autograd.hpp"

#include <malloc.h>

#include "naslab/core/error.hpp"

namespace naslab {

namespace {
// Tapes allocate and free many mid-sized tensors per step; keeping them off
// mmap avoids a page-fault storm on every forward pass.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
}  // namespace

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, true, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, true, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  bool needs = false;
  for (int id : inputs) needs = needs || requires_grad(id);
  Node node{std::move(value), {}, needs, false, {}};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor* Tape::grad_sink(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var out) {
  if (out.tape_ != this) throw InputError("backward on a Var from another tape");
  if (value(out).size() != 1) throw InputError("backward needs a single-element output");
  for (auto& n : nodes_) n.grad = Tensor();
  Node& root = nodes_[static_cast<std::size_t>(out.id())];
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
    // Interior gradients are dead once propagated.
    if (!n.is_leaf) n.grad = Tensor();
  }
}

}  // namespace naslab
