// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/nn/tape.hpp"

#include "avs/core/error.hpp"

namespace avs::nn {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Matrix value) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::parameter_ref(const Matrix& value) {
  Node n;
  n.ref = &value;
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::constant_ref(const Matrix& value) {
  Node n;
  n.ref = &value;
  return push(std::move(n));
}

Var Tape::record(Matrix value, bool needs_grad, Backward backward) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

bool Tape::any_needs_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs) {
    if (nodes_[v.id_].needs_grad) return true;
  }
  return false;
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id_];
  return n.ref != nullptr ? *n.ref : n.owned;
}

void Tape::backward(Var root) {
  require(root.tape_ == this, ErrorCode::kShape, "backward root belongs to another tape");
  const Matrix& rv = value(root);
  require(rv.rows() == 1 && rv.cols() == 1, ErrorCode::kShape, "backward root must be a scalar");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(root, Matrix::Ones(1, 1));
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(n.grad);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.has_grad) return n.grad;
  const Matrix& val = value(v);
  return Matrix::Zero(val.rows(), val.cols());
}

}  // namespace avs::nn
