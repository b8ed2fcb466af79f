// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense matrices. A Tape records every
// forward operation; backward() walks the record in reverse creation order
// and accumulates gradients into the Parameters that were read through it.
// A tape is built per forward pass and discarded afterwards.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "kgattack/parameters.hpp"
#include "kgattack/tensor.hpp"

namespace kgattack {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Value of a 1x1 Var.
  double scalar() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a trainable parameter. Repeated reads of the same
  /// parameter share one node.
  Var parameter(Parameter& p);

  /// Propagates d(loss)/d(.) through the record and adds the result into
  /// every reachable Parameter's gradient. `loss` must be 1x1.
  void backward(const Var& loss);

  /// Gradient of the last backward() with respect to `v` (zeros when `v`
  /// was unreachable).
  Matrix grad(const Var& v) const;

  /// Throw NumericError as soon as an op produces a non-finite value.
  void set_finite_checks(bool on) { check_finite_ = on; }
  std::size_t size() const { return nodes_.size(); }

  // Op-implementation interface.
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator for node `id`, allocated on first use.
  Matrix& grad_slot(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool check_finite_ = false;
};

// ---- forward operations -------------------------------------------------
// All operations throw NumericError on shape mismatch, naming the op.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
/// factor * a + offset, elementwise.
Var scale(const Var& a, double factor, double offset = 0.0);
/// W x + b
Var affine(const Var& w, const Var& x, const Var& b);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
/// Max-shifted softmax over all entries of a vector.
Var softmax(const Var& a);
Var log_softmax(const Var& a);
/// Vertical concatenation of column blocks with equal column count.
Var concat(std::span<const Var> parts);
/// Horizontal stacking of column vectors into a matrix.
Var hstack(std::span<const Var> columns);
/// Inner product of two same-shape tensors, 1x1 result.
Var dot(const Var& a, const Var& b);
Var sum(const Var& a);
/// Entry `i` (flat index) as 1x1.
Var element(const Var& a, std::size_t i);
/// Entries at `indices` (flat) as a column vector.
Var gather(const Var& a, std::span<const std::size_t> indices);
/// Column vector of length n with a[j] added at position indices[j].
Var scatter_add(const Var& a, std::span<const std::size_t> indices, std::size_t n);
/// Row `r` of a matrix as a column vector.
Var row(const Var& a, std::size_t r);
/// Elementwise minimum; ties pass the gradient to `a`.
Var minimum(const Var& a, const Var& b);
/// Elementwise clamp; zero gradient outside [lo, hi].
Var clamp(const Var& a, double lo, double hi);
/// Same value, no gradient path.
Var detach(const Var& a);

}  // namespace kgattack
