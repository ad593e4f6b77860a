// Copyright 2026 The flowcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLOWCAST__NUMERICS__TAPE_HPP_
#define FLOWCAST__NUMERICS__TAPE_HPP_

#include "flowcast/numerics/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>

namespace flowcast
{

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy.
template <typename Scalar>
class Var
{
public:
  Var() = default;
  Var(Tape<Scalar> * tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape<Scalar> & tape() const { return *tape_; }

  const Tensor<Scalar> & value() const { return tape_->value(*this); }
  const Shape & shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  Index rank() const { return value().rank(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

private:
  Tape<Scalar> * tape_ = nullptr;
  std::size_t id_ = 0;
};

/**
 * Reverse-mode gradient recorder.
 *
 * Nodes are appended in evaluation order, so reverse creation order is a
 * valid topological order for the backward sweep. Backward closures
 * receive the gradient of their output and accumulate into their inputs
 * through `grad_buffer`.
 */
template <typename Scalar>
class Tape
{
public:
  using BackwardFn = std::function<void(Tape &, const Tensor<Scalar> &)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape & operator=(const Tape &) = delete;

  Var<Scalar> constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr); }

  Var<Scalar> variable(Tensor<Scalar> value) { return push(std::move(value), true, nullptr); }

  /// Record an op. The closure is dropped when no input requires a gradient.
  Var<Scalar> record(
    Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs, BackwardFn backward)
  {
    bool needs = false;
    for (const auto & in : inputs) {
      if (&in.tape() != this) throw ShapeError("op mixes variables from different tapes");
      needs = needs || node(in).requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor<Scalar> & value(const Var<Scalar> & v) const { return node(v).value; }
  bool requires_grad(const Var<Scalar> & v) const { return node(v).requires_grad; }

  /// Zero-initialised on first use; only meaningful for nodes that require grad.
  Tensor<Scalar> & grad_buffer(const Var<Scalar> & v)
  {
    Node & n = node(v);
    if (!n.has_grad) {
      n.grad = Tensor<Scalar>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(const Var<Scalar> & v, const Tensor<Scalar> & g)
  {
    if (!requires_grad(v)) return;
    grad_buffer(v).flat() += g.flat();
  }

  /// Seed d(loss)/d(loss) = 1 and sweep every earlier node once.
  void backward(const Var<Scalar> & loss)
  {
    if (backward_done_) throw ShapeError("backward already run on this tape");
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar loss, got " + shape_string(loss.shape()));
    }
    backward_done_ = true;
    if (!requires_grad(loss)) return;
    grad_buffer(loss).flat().setOnes();
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node & n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
      n.backward = nullptr;
    }
  }

  /// Gradient of a node after backward; zeros when the node was not reached.
  Tensor<Scalar> gradient(const Var<Scalar> & v) const
  {
    const Node & n = node(v);
    return n.has_grad ? n.grad : Tensor<Scalar>(n.value.shape());
  }

  bool reached(const Var<Scalar> & v) const { return node(v).has_grad; }

  std::size_t size() const { return nodes_.size(); }

private:
  struct Node
  {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var<Scalar> push(Tensor<Scalar> value, bool requires_grad, BackwardFn backward)
  {
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), requires_grad, false});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  Node & node(const Var<Scalar> & v)
  {
    if (&v.tape() != this || v.id() >= nodes_.size()) throw ShapeError("variable not on this tape");
    return nodes_[v.id()];
  }
  const Node & node(const Var<Scalar> & v) const
  {
    if (&v.tape() != this || v.id() >= nodes_.size()) throw ShapeError("variable not on this tape");
    return nodes_[v.id()];
  }

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace flowcast

#endif  // FLOWCAST__NUMERICS__TAPE_HPP_
