#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "naslab/core/tensor.hpp"

namespace naslab {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int dim(int axis) const { return value().dim(axis); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recorder. Ops append nodes; `backward` walks them in reverse.
/// Nodes whose inputs carry no gradient are stored without a backward closure.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is retained after `backward`.
  Var variable(Tensor value);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& value(Var v) const { return value(v.id()); }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  /// Gradient of the last `backward` target with respect to `v` (zeros if unreached).
  Tensor grad(Var v) const;

  /// Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  void backward(Var out);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Op-implementation interface.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);
  const Tensor& out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  /// Gradient accumulator of `id`, allocated on first use. Null when `id` needs no gradient.
  Tensor* grad_sink(int id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace naslab
