// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "avs/core/rng.hpp"
#include "avs/nn/ops.hpp"
#include "avs/nn/tape.hpp"

namespace avs::nn {
namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  RandomStream rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Builds a scalar from the inputs; the projection onto a fixed random
// direction makes every output element matter.
using Graph = std::function<Var(Tape&, std::vector<Var>&)>;

double eval_scalar(const Graph& g, const std::vector<Matrix>& inputs) {
  Tape t;
  std::vector<Var> vars;
  for (const Matrix& m : inputs) vars.push_back(t.constant(m));
  return g(t, vars).value()(0, 0);
}

void check_gradients(const Graph& g, std::vector<Matrix> inputs, double tol = 1e-6) {
  Tape t;
  std::vector<Var> vars;
  for (const Matrix& m : inputs) vars.push_back(t.parameter(m));
  Var out = g(t, vars);
  ASSERT_EQ(out.rows(), 1);
  ASSERT_EQ(out.cols(), 1);
  t.backward(out);
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = t.grad(vars[k]);
    Matrix numeric(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data()[i];
      inputs[k].data()[i] = saved + h;
      const double up = eval_scalar(g, inputs);
      inputs[k].data()[i] = saved - h;
      const double down = eval_scalar(g, inputs);
      inputs[k].data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double denom = std::max(numeric.norm(), 1e-8);
    EXPECT_LT((analytic - numeric).norm() / denom, tol) << "input " << k;
  }
}

Var project(Tape& t, Var x, std::uint64_t seed) {
  return sum_all(mul(x, t.constant(random_matrix(x.rows(), x.cols(), seed))));
}

TEST(Ops, Arithmetic) {
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, add(v[0], v[1]), 1); },
                  {random_matrix(3, 4, 2), random_matrix(3, 4, 3)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, sub(v[0], v[1]), 1); },
                  {random_matrix(3, 4, 2), random_matrix(3, 4, 3)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, mul(v[0], v[1]), 1); },
                  {random_matrix(3, 4, 2), random_matrix(3, 4, 3)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, scale(v[0], -2.5), 1); },
                  {random_matrix(3, 4, 2)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, add_row(v[0], v[1]), 1); },
                  {random_matrix(3, 4, 2), random_matrix(1, 4, 3)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, mul_row(v[0], v[1]), 1); },
                  {random_matrix(3, 4, 2), random_matrix(1, 4, 3)});
}

TEST(Ops, MatmulAndLinear) {
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, matmul(v[0], v[1]), 4); },
                  {random_matrix(3, 5, 2), random_matrix(5, 2, 3)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, linear(v[0], v[1], v[2]), 4); },
                  {random_matrix(3, 5, 2), random_matrix(5, 2, 3), random_matrix(1, 2, 5)});
}

TEST(Ops, NormsAndActivations) {
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, layer_norm(v[0]), 7); },
                  {random_matrix(4, 6, 2)});
  check_gradients(
      [](Tape& t, std::vector<Var>& v) { return project(t, modulate(v[0], v[1], v[2]), 7); },
      {random_matrix(4, 6, 2), random_matrix(1, 6, 3), random_matrix(1, 6, 4)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, gelu(v[0]), 7); },
                  {random_matrix(4, 6, 2, 2.0)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, silu(v[0]), 7); },
                  {random_matrix(4, 6, 2, 2.0)});
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, elu_plus_one(v[0]), 7); },
                  {random_matrix(4, 6, 2, 2.0)});
}

TEST(Ops, LayerNormValues) {
  Tape t;
  Matrix x(1, 4);
  x << 1, 2, 3, 4;
  const Matrix y = layer_norm(t.constant(x), 0.0).value();
  // mean 2.5, population variance 1.25
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(y(0, j), (x(0, j) - 2.5) / std::sqrt(1.25), 1e-12);
}

TEST(Ops, GeluValues) {
  Tape t;
  Matrix x(1, 3);
  x << -1.0, 0.0, 1.5;
  const Matrix y = gelu(t.constant(x)).value();
  for (int j = 0; j < 3; ++j) {
    const double v = x(0, j);
    const double ref = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
    EXPECT_NEAR(y(0, j), ref, 1e-12);
  }
}

TEST(Ops, SliceConcatGather) {
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, slice_cols(v[0], 2, 3), 8); },
                  {random_matrix(4, 6, 2)});
  check_gradients(
      [](Tape& t, std::vector<Var>& v) {
        const Var parts[] = {v[0], v[1], v[0]};
        return project(t, concat_rows(parts), 8);
      },
      {random_matrix(2, 3, 2), random_matrix(3, 3, 3)});
  check_gradients(
      [](Tape& t, std::vector<Var>& v) {
        const int rows[] = {3, 0, 3, 1};
        return project(t, gather_rows(v[0], rows), 8);
      },
      {random_matrix(5, 3, 2)});
}

// Plain loop-based reference for one head of softmax attention.
Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                           const std::vector<int>& qb, const std::vector<int>& kb) {
  const Eigen::Index dh = q.cols() / heads, dv = v.cols() / heads;
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      std::vector<double> w(k.rows(), 0.0);
      double mx = -1e300;
      bool any = false;
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        if (!qb.empty() && qb[i] != kb[j]) continue;
        double s = 0;
        for (Eigen::Index c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        w[j] = s / std::sqrt(double(dh));
        mx = std::max(mx, w[j]);
        any = true;
      }
      if (!any) continue;
      double z = 0;
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        if (!qb.empty() && qb[i] != kb[j]) {
          w[j] = 0;
          continue;
        }
        w[j] = std::exp(w[j] - mx);
        z += w[j];
      }
      for (Eigen::Index j = 0; j < k.rows(); ++j)
        for (Eigen::Index c = 0; c < dv; ++c) out(i, h * dv + c) += w[j] / z * v(j, h * dv + c);
    }
  }
  return out;
}

TEST(Ops, AttentionMatchesReference) {
  const Matrix q = random_matrix(5, 8, 1), k = random_matrix(7, 8, 2), v = random_matrix(7, 6, 3);
  EXPECT_LT((attention_forward(q, k, v, 2) - reference_attention(q, k, v, 2, {}, {})).norm(), 1e-12);
  const std::vector<int> qb{0, 0, 1, 2, 5}, kb{0, 1, 1, 1, 2, 2, 0};
  const Matrix masked = attention_forward(q, k, v, 2, qb, kb);
  EXPECT_LT((masked - reference_attention(q, k, v, 2, qb, kb)).norm(), 1e-12);
  // Bucket 5 has no keys.
  EXPECT_EQ(masked.row(4).norm(), 0.0);
}

TEST(Ops, AttentionGradients) {
  check_gradients([](Tape& t, std::vector<Var>& v) { return project(t, attention(v[0], v[1], v[2], 2), 9); },
                  {random_matrix(5, 8, 1), random_matrix(7, 8, 2), random_matrix(7, 6, 3)});
  check_gradients(
      [](Tape& t, std::vector<Var>& v) {
        static const std::vector<int> qb{0, 0, 1, 2, 5}, kb{0, 1, 1, 1, 2, 2, 0};
        return project(t, attention(v[0], v[1], v[2], 2, qb, kb), 9);
      },
      {random_matrix(5, 8, 1), random_matrix(7, 8, 2), random_matrix(7, 6, 3)});
}

TEST(Ops, KernelAttentionMatchesReference) {
  const Matrix fq = elu_plus_one(random_matrix(4, 6, 1)), fk = elu_plus_one(random_matrix(5, 6, 2));
  const Matrix v = random_matrix(5, 4, 3);
  const Matrix out = kernel_attention_forward(fq, fk, v, 2);
  for (int h = 0; h < 2; ++h) {
    for (Eigen::Index i = 0; i < 4; ++i) {
      double den = 0;
      std::vector<double> w(5);
      for (Eigen::Index j = 0; j < 5; ++j) {
        w[j] = fq.row(i).segment(h * 3, 3).dot(fk.row(j).segment(h * 3, 3));
        den += w[j];
      }
      for (Eigen::Index c = 0; c < 2; ++c) {
        double num = 0;
        for (Eigen::Index j = 0; j < 5; ++j) num += w[j] * v(j, h * 2 + c);
        EXPECT_NEAR(out(i, h * 2 + c), num / den, 1e-12);
      }
    }
  }
}

TEST(Ops, KernelAttentionGradients) {
  check_gradients(
      [](Tape& t, std::vector<Var>& v) {
        return project(t, kernel_attention(elu_plus_one(v[0]), elu_plus_one(v[1]), v[2], 2), 10);
      },
      {random_matrix(4, 6, 1), random_matrix(5, 6, 2), random_matrix(5, 4, 3)});
}

TEST(Ops, Losses) {
  check_gradients([](Tape&, std::vector<Var>& v) { return mse(v[0], v[1]); },
                  {random_matrix(3, 4, 1), random_matrix(3, 4, 2)});
  check_gradients([](Tape&, std::vector<Var>& v) { return cosine_rows_mean(v[0], v[1]); },
                  {random_matrix(3, 4, 1), random_matrix(3, 4, 2)});

  Tape t;
  Matrix a(2, 2), b(2, 2);
  a << 1, 0, 1, 1;
  b << 0, 1, 2, 2;
  EXPECT_NEAR(mse(t.constant(a), t.constant(b)).value()(0, 0), (1 + 1 + 1 + 1) / 4.0, 1e-15);
  EXPECT_NEAR(cosine_rows_mean(t.constant(a), t.constant(b)).value()(0, 0), 0.5, 1e-15);
  Matrix z = Matrix::Zero(1, 2);
  EXPECT_EQ(cosine_rows_mean(t.constant(z), t.constant(z)).value()(0, 0), 0.0);
}

TEST(Tape, ConstantsGetNoGradientAndUnusedParamsGetZero) {
  Tape t;
  Var c = t.constant(random_matrix(2, 2, 1));
  Var p = t.parameter(random_matrix(2, 2, 2));
  Var unused = t.parameter(random_matrix(2, 2, 3));
  Var out = sum_all(mul(c, p));
  t.backward(out);
  EXPECT_FALSE(t.has_grad(c));
  EXPECT_LT((t.grad(p) - c.value()).norm(), 1e-15);
  EXPECT_EQ(t.grad(unused).norm(), 0.0);
}

TEST(Tape, ParameterRefReadsInPlace) {
  const Matrix w = random_matrix(3, 3, 4);
  Tape t;
  Var p = t.parameter_ref(w);
  EXPECT_EQ(&p.value(), &w);
  t.backward(sum_all(p));
  EXPECT_LT((t.grad(p) - Matrix::Ones(3, 3)).norm(), 1e-15);
}

TEST(Tape, SharedSubexpressionAccumulates) {
  Tape t;
  Var x = t.parameter(random_matrix(2, 3, 5));
  Var y = add(x, x);
  t.backward(sum_all(mul(y, x)));  // 2 x^2 summed
  EXPECT_LT((t.grad(x) - 4 * x.value()).norm(), 1e-12);
}

}  // namespace
}  // namespace avs::nn
