// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>

#include <Eigen/Core>

namespace avs::nn {

using Real = double;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode automatic differentiation over dense matrices. Nodes are
/// appended in evaluation order, so a single reverse sweep is a valid
/// topological order.
class Tape {
 public:
  using Backward = std::function<void(const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf that receives gradients; the tape owns a copy of the value.
  Var parameter(Matrix value);
  /// Leaf that receives gradients and reads `value` in place. The referenced
  /// matrix must outlive the tape and stay unchanged while it is in use.
  Var parameter_ref(const Matrix& value);
  /// Leaf without gradient that reads `value` in place (same lifetime rule).
  Var constant_ref(const Matrix& value);

  /// Records an op result. `backward` is kept only when some input needs a
  /// gradient.
  Var record(Matrix value, bool needs_grad, Backward backward);

  bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }
  bool any_needs_grad(std::initializer_list<Var> vs) const;

  /// Adds `contribution` into the gradient of `v` (ignored for constants).
  template <typename Expr>
  void accumulate(Var v, const Expr& contribution) {
    Node& n = nodes_[v.id_];
    if (!n.needs_grad) return;
    if (!n.has_grad) {
      n.grad = contribution;
      n.has_grad = true;
    } else {
      n.grad += contribution;
    }
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps backwards.
  void backward(Var root);

  bool has_grad(Var v) const { return nodes_[v.id_].has_grad; }
  /// Gradient of the last backward() root w.r.t. `v`; a zero matrix when no
  /// path reached `v`.
  Matrix grad(Var v) const;

  const Matrix& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

}  // namespace avs::nn
