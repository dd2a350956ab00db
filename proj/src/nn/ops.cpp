// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/nn/ops.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "avs/core/error.hpp"

namespace avs::nn {
namespace {

void require_same_shape(Var a, Var b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShape,
          std::string(op) + ": operand shapes differ");
}

void require_row(Var row, Var a, const char* op) {
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorCode::kShape,
          std::string(op) + ": broadcast operand must be 1 x cols");
}

RowVector col_sum(const Matrix& m) { return m.colwise().sum(); }

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tape& t = a.tape();
  return t.record(a.value() + b.value(), t.any_needs_grad({a, b}), [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tape& t = a.tape();
  return t.record(a.value() - b.value(), t.any_needs_grad({a, b}), [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tape& t = a.tape();
  return t.record(a.value().cwiseProduct(b.value()), t.any_needs_grad({a, b}),
                  [&t, a, b](const Matrix& g) {
                    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
                    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
                  });
}

Var scale(Var a, Real c) {
  Tape& t = a.tape();
  return t.record(a.value() * c, t.needs_grad(a), [&t, a, c](const Matrix& g) { t.accumulate(a, g * c); });
}

Var add_row(Var a, Var row) {
  require_row(row, a, "add_row");
  Tape& t = a.tape();
  Matrix out = a.value().rowwise() + RowVector(row.value());
  return t.record(std::move(out), t.any_needs_grad({a, row}), [&t, a, row](const Matrix& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, col_sum(g));
  });
}

Var mul_row(Var a, Var row) {
  require_row(row, a, "mul_row");
  Tape& t = a.tape();
  const RowVector r = row.value();
  Matrix out = a.value().array().rowwise() * r.array();
  return t.record(std::move(out), t.any_needs_grad({a, row}), [&t, a, row](const Matrix& g) {
    if (t.needs_grad(a)) {
      const RowVector r = row.value();
      t.accumulate(a, Matrix(g.array().rowwise() * r.array()));
    }
    if (t.needs_grad(row)) t.accumulate(row, col_sum(g.cwiseProduct(a.value())));
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), ErrorCode::kShape, "matmul: inner dimensions differ");
  Tape& t = a.tape();
  Matrix out = a.value() * b.value();
  return t.record(std::move(out), t.any_needs_grad({a, b}), [&t, a, b](const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var linear(Var x, Var w, Var b) {
  require(x.cols() == w.rows(), ErrorCode::kShape, "linear: input width does not match weight rows");
  require(b.rows() == 1 && b.cols() == w.cols(), ErrorCode::kShape, "linear: bias shape mismatch");
  Tape& t = x.tape();
  Matrix out = x.value() * w.value();
  out.rowwise() += RowVector(b.value());
  return t.record(std::move(out), t.any_needs_grad({x, w, b}), [&t, x, w, b](const Matrix& g) {
    if (t.needs_grad(x)) t.accumulate(x, g * w.value().transpose());
    if (t.needs_grad(w)) t.accumulate(w, x.value().transpose() * g);
    if (t.needs_grad(b)) t.accumulate(b, col_sum(g));
  });
}

Var layer_norm(Var x, Real eps) {
  Tape& t = x.tape();
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Real width = static_cast<Real>(xv.cols());
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  auto normed = std::make_shared<Matrix>(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real mean = xv.row(i).mean();
    const Real var = (xv.row(i).array() - mean).square().sum() / width;
    (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
    normed->row(i) = (xv.row(i).array() - mean) * (*inv_std)(i);
  }
  Matrix out = *normed;
  return t.record(std::move(out), t.needs_grad(x), [&t, x, inv_std, normed, width](const Matrix& g) {
    Matrix dx(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const Real mean_g = g.row(i).mean();
      const Real mean_gx = g.row(i).dot(normed->row(i)) / width;
      dx.row(i) = (*inv_std)(i) * (g.row(i).array() - mean_g - normed->row(i).array() * mean_gx);
    }
    t.accumulate(x, dx);
  });
}

Var modulate(Var x, Var shift, Var scale_row) {
  require_row(shift, x, "modulate");
  require_row(scale_row, x, "modulate");
  Tape& t = x.tape();
  const RowVector factor = RowVector::Ones(x.cols()) + RowVector(scale_row.value());
  Matrix out = x.value().array().rowwise() * factor.array();
  out.rowwise() += RowVector(shift.value());
  return t.record(std::move(out), t.any_needs_grad({x, shift, scale_row}),
                  [&t, x, shift, scale_row](const Matrix& g) {
                    if (t.needs_grad(x)) {
                      const RowVector factor = RowVector::Ones(x.cols()) + RowVector(scale_row.value());
                      t.accumulate(x, Matrix(g.array().rowwise() * factor.array()));
                    }
                    if (t.needs_grad(shift)) t.accumulate(shift, col_sum(g));
                    if (t.needs_grad(scale_row)) t.accumulate(scale_row, col_sum(g.cwiseProduct(x.value())));
                  });
}

namespace {

constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Real kGeluA = 0.044715;

}  // namespace

Var gelu(Var x) {
  Tape& t = x.tape();
  const Matrix& xv = x.value();
  Matrix out = xv.unaryExpr([](Real v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); });
  return t.record(std::move(out), t.needs_grad(x), [&t, x](const Matrix& g) {
    const Matrix d = x.value().unaryExpr([](Real v) {
      const Real th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Var silu(Var x) {
  Tape& t = x.tape();
  Matrix out = x.value().unaryExpr([](Real v) { return v / (1.0 + std::exp(-v)); });
  return t.record(std::move(out), t.needs_grad(x), [&t, x](const Matrix& g) {
    const Matrix d = x.value().unaryExpr([](Real v) {
      const Real s = 1.0 / (1.0 + std::exp(-v));
      return s * (1.0 + v * (1.0 - s));
    });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Matrix elu_plus_one(const Matrix& x) {
  return x.unaryExpr([](Real v) { return v > 0.0 ? v + 1.0 : std::exp(v); });
}

Var elu_plus_one(Var x) {
  Tape& t = x.tape();
  return t.record(elu_plus_one(x.value()), t.needs_grad(x), [&t, x](const Matrix& g) {
    const Matrix d = x.value().unaryExpr([](Real v) { return v > 0.0 ? 1.0 : std::exp(v); });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), ErrorCode::kShape, "slice_cols out of range");
  Tape& t = x.tape();
  Matrix out = x.value().middleCols(start, count);
  return t.record(std::move(out), t.needs_grad(x), [&t, x, start, count](const Matrix& g) {
    Matrix full = Matrix::Zero(x.rows(), x.cols());
    full.middleCols(start, count) = g;
    t.accumulate(x, full);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::kShape, "concat_rows of nothing");
  Tape& t = parts.front().tape();
  Eigen::Index rows = 0;
  bool needs = false;
  for (Var p : parts) {
    require(p.cols() == parts.front().cols(), ErrorCode::kShape, "concat_rows: widths differ");
    rows += p.rows();
    needs = needs || t.needs_grad(p);
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.record(std::move(out), needs, [&t, saved](const Matrix& g) {
    Eigen::Index r = 0;
    for (Var p : saved) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

Var gather_rows(Var table, std::span<const int> rows) {
  Tape& t = table.tape();
  Matrix out(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < table.rows(), ErrorCode::kShape, "gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return t.record(std::move(out), t.needs_grad(table), [&t, table, idx](const Matrix& g) {
    Matrix d = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(table, d);
  });
}

namespace {

struct AttentionCache {
  std::vector<Matrix> probs;  // one n x m matrix per head
};

void check_heads(Eigen::Index width, int heads, const char* what) {
  require(heads > 0 && width % heads == 0, ErrorCode::kShape, std::string(what) + " width not divisible by heads");
}

Matrix attention_impl(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                      std::span<const int> q_bucket, std::span<const int> k_bucket, AttentionCache* cache) {
  require(q.cols() == k.cols(), ErrorCode::kShape, "attention: query/key widths differ");
  require(k.rows() == v.rows(), ErrorCode::kShape, "attention: key/value counts differ");
  check_heads(q.cols(), heads, "attention q/k");
  check_heads(v.cols(), heads, "attention v");
  const bool masked = !q_bucket.empty() || !k_bucket.empty();
  if (masked) {
    require(q_bucket.size() == static_cast<std::size_t>(q.rows()) &&
                k_bucket.size() == static_cast<std::size_t>(k.rows()),
            ErrorCode::kShape, "attention: bucket ids must cover every query and key");
  }
  const Eigen::Index n = q.rows();
  const Eigen::Index m = k.rows();
  const Eigen::Index dh = q.cols() / heads;
  const Eigen::Index dv = v.cols() / heads;
  const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
  Matrix out = Matrix::Zero(n, v.cols());
  if (cache != nullptr) cache->probs.assign(heads, Matrix());
  for (int h = 0; h < heads; ++h) {
    Matrix p = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * inv_sqrt;
    for (Eigen::Index i = 0; i < n; ++i) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (Eigen::Index j = 0; j < m; ++j) {
        if (masked && q_bucket[i] != k_bucket[j]) continue;
        mx = std::max(mx, p(i, j));
      }
      if (mx == -std::numeric_limits<Real>::infinity()) {
        p.row(i).setZero();
        continue;
      }
      Real total = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) {
        if (masked && q_bucket[i] != k_bucket[j]) {
          p(i, j) = 0.0;
          continue;
        }
        p(i, j) = std::exp(p(i, j) - mx);
        total += p(i, j);
      }
      p.row(i) /= total;
    }
    out.middleCols(h * dv, dv).noalias() = p * v.middleCols(h * dv, dv);
    if (cache != nullptr) cache->probs[h] = std::move(p);
  }
  return out;
}

}  // namespace

Matrix attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                         std::span<const int> q_bucket, std::span<const int> k_bucket) {
  return attention_impl(q, k, v, heads, q_bucket, k_bucket, nullptr);
}

Var attention(Var q, Var k, Var v, int heads, std::span<const int> q_bucket, std::span<const int> k_bucket) {
  Tape& t = q.tape();
  const bool needs = t.any_needs_grad({q, k, v});
  auto cache = std::make_shared<AttentionCache>();
  Matrix out = attention_impl(q.value(), k.value(), v.value(), heads, q_bucket, k_bucket, needs ? cache.get() : nullptr);
  return t.record(std::move(out), needs, [&t, q, k, v, heads, cache](const Matrix& g) {
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    const Eigen::Index dh = qv.cols() / heads;
    const Eigen::Index dv = vv.cols() / heads;
    const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
    Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
    Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
    Matrix dvm = Matrix::Zero(vv.rows(), vv.cols());
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = cache->probs[h];
      const auto go = g.middleCols(h * dv, dv);
      dvm.middleCols(h * dv, dv).noalias() = p.transpose() * go;
      const Matrix dp = go * vv.middleCols(h * dv, dv).transpose();
      const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
      const Matrix ds = p.cwiseProduct(dp.colwise() - row_dot) * inv_sqrt;
      dq.middleCols(h * dh, dh).noalias() = ds * kv.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qv.middleCols(h * dh, dh);
    }
    if (t.needs_grad(q)) t.accumulate(q, dq);
    if (t.needs_grad(k)) t.accumulate(k, dk);
    if (t.needs_grad(v)) t.accumulate(v, dvm);
  });
}

namespace {

struct KernelCache {
  std::vector<Matrix> kv;                 // dh x dv per head
  std::vector<RowVector> key_sum;         // 1 x dh per head
  std::vector<Eigen::VectorXd> denom;     // n per head
};

Matrix kernel_impl(const Matrix& fq, const Matrix& fk, const Matrix& v, int heads, KernelCache* cache) {
  require(fq.cols() == fk.cols(), ErrorCode::kShape, "linear attention: query/key widths differ");
  require(fk.rows() == v.rows(), ErrorCode::kShape, "linear attention: key/value counts differ");
  check_heads(fq.cols(), heads, "linear attention q/k");
  check_heads(v.cols(), heads, "linear attention v");
  const Eigen::Index dh = fq.cols() / heads;
  const Eigen::Index dv = v.cols() / heads;
  Matrix out(fq.rows(), v.cols());
  if (cache != nullptr) {
    cache->kv.assign(heads, Matrix());
    cache->key_sum.assign(heads, RowVector());
    cache->denom.assign(heads, Eigen::VectorXd());
  }
  for (int h = 0; h < heads; ++h) {
    const auto q = fq.middleCols(h * dh, dh);
    const auto k = fk.middleCols(h * dh, dh);
    Matrix kv = k.transpose() * v.middleCols(h * dv, dv);
    RowVector ks = k.colwise().sum();
    Eigen::VectorXd den = q * ks.transpose();
    out.middleCols(h * dv, dv) = (q * kv).array().colwise() / den.array();
    if (cache != nullptr) {
      cache->kv[h] = std::move(kv);
      cache->key_sum[h] = std::move(ks);
      cache->denom[h] = std::move(den);
    }
  }
  return out;
}

}  // namespace

Matrix kernel_attention_forward(const Matrix& fq, const Matrix& fk, const Matrix& v, int heads) {
  return kernel_impl(fq, fk, v, heads, nullptr);
}

Var kernel_attention(Var fq, Var fk, Var v, int heads) {
  Tape& t = fq.tape();
  const bool needs = t.any_needs_grad({fq, fk, v});
  auto cache = std::make_shared<KernelCache>();
  Matrix out = kernel_impl(fq.value(), fk.value(), v.value(), heads, needs ? cache.get() : nullptr);
  auto out_copy = std::make_shared<Matrix>(out);
  return t.record(std::move(out), needs, [&t, fq, fk, v, heads, cache, out_copy](const Matrix& g) {
    const Matrix& qv = fq.value();
    const Matrix& kv = fk.value();
    const Matrix& vv = v.value();
    const Eigen::Index dh = qv.cols() / heads;
    const Eigen::Index dv = vv.cols() / heads;
    Matrix dq(qv.rows(), qv.cols());
    Matrix dk(kv.rows(), kv.cols());
    Matrix dvm(vv.rows(), vv.cols());
    for (int h = 0; h < heads; ++h) {
      const auto go = g.middleCols(h * dv, dv);
      const auto o = out_copy->middleCols(h * dv, dv);
      const Eigen::VectorXd& den = cache->denom[h];
      // out = num / den
      const Matrix dnum = go.array().colwise() / den.array();
      const Eigen::VectorXd dden = -(go.cwiseProduct(o).rowwise().sum().array() / den.array()).matrix();
      dq.middleCols(h * dh, dh) = dnum * cache->kv[h].transpose() + dden * cache->key_sum[h];
      const Matrix dkv = qv.middleCols(h * dh, dh).transpose() * dnum;
      const RowVector dks = dden.transpose() * qv.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = vv.middleCols(h * dv, dv) * dkv.transpose();
      dk.middleCols(h * dh, dh).rowwise() += dks;
      dvm.middleCols(h * dv, dv) = kv.middleCols(h * dh, dh) * dkv;
    }
    if (t.needs_grad(fq)) t.accumulate(fq, dq);
    if (t.needs_grad(fk)) t.accumulate(fk, dk);
    if (t.needs_grad(v)) t.accumulate(v, dvm);
  });
}

Var mse(Var a, Var b) {
  require_same_shape(a, b, "mse");
  Tape& t = a.tape();
  const Real n = static_cast<Real>(a.value().size());
  auto diff = std::make_shared<Matrix>(a.value() - b.value());
  Matrix out(1, 1);
  out(0, 0) = diff->squaredNorm() / n;
  return t.record(std::move(out), t.any_needs_grad({a, b}), [&t, a, b, diff, n](const Matrix& g) {
    const Real c = 2.0 * g(0, 0) / n;
    if (t.needs_grad(a)) t.accumulate(a, *diff * c);
    if (t.needs_grad(b)) t.accumulate(b, *diff * -c);
  });
}

Var cosine_rows_mean(Var a, Var b) {
  require_same_shape(a, b, "cosine_rows_mean");
  constexpr Real kEps = 1e-8;
  Tape& t = a.tape();
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Eigen::Index n = av.rows();
  Eigen::VectorXd na(n), nb(n), cos(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    na(i) = std::max(av.row(i).norm(), kEps);
    nb(i) = std::max(bv.row(i).norm(), kEps);
    cos(i) = av.row(i).dot(bv.row(i)) / (na(i) * nb(i));
  }
  Matrix out(1, 1);
  out(0, 0) = cos.mean();
  return t.record(std::move(out), t.any_needs_grad({a, b}), [&t, a, b, na, nb, cos](const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const Eigen::Index n = av.rows();
    const Real c = g(0, 0) / static_cast<Real>(n);
    Matrix da(av.rows(), av.cols());
    Matrix db(bv.rows(), bv.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool a_clamped = av.row(i).norm() < kEps;
      const bool b_clamped = bv.row(i).norm() < kEps;
      da.row(i) = bv.row(i) / (na(i) * nb(i));
      if (!a_clamped) da.row(i) -= cos(i) * av.row(i) / (na(i) * na(i));
      db.row(i) = av.row(i) / (na(i) * nb(i));
      if (!b_clamped) db.row(i) -= cos(i) * bv.row(i) / (nb(i) * nb(i));
    }
    if (t.needs_grad(a)) t.accumulate(a, da * c);
    if (t.needs_grad(b)) t.accumulate(b, db * c);
  });
}

Var sum_all(Var a) {
  Tape& t = a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), t.needs_grad(a), [&t, a](const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

}  // namespace avs::nn
