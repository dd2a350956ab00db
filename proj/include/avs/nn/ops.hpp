// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "avs/nn/tape.hpp"

namespace avs::nn {

// Elementwise / broadcasting arithmetic. "row" operands are 1 x C and are
// broadcast over every row of the other operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Real c);
Var add_row(Var a, Var row);
Var mul_row(Var a, Var row);

Var matmul(Var a, Var b);
/// x * w + b with b broadcast over rows.
Var linear(Var x, Var w, Var b);

/// Per-row normalisation without affine parameters.
Var layer_norm(Var x, Real eps = 1e-6);
/// x * (1 + scale) + shift, scale/shift broadcast over rows.
Var modulate(Var x, Var shift, Var scale);

Var gelu(Var x);
Var silu(Var x);
/// elu(x) + 1, the positive feature map used by linear attention.
Var elu_plus_one(Var x);

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
/// Row gather (embedding lookup); gradients scatter-add back into `table`.
Var gather_rows(Var table, std::span<const int> rows);

/// Multi-head scaled dot-product attention. q: n x D, k: m x D, v: m x Dv,
/// heads split D and Dv evenly. When bucket ids are given, query i only sees
/// keys j with k_bucket[j] == q_bucket[i]; a query with no visible key gets a
/// zero output row.
Var attention(Var q, Var k, Var v, int heads, std::span<const int> q_bucket = {},
              std::span<const int> k_bucket = {});

/// Multi-head kernelised attention on already feature-mapped queries/keys:
/// out = fq (fk^T v) / (fq . sum_j fk_j), per head.
Var kernel_attention(Var fq, Var fk, Var v, int heads);

/// Mean squared error over all elements, as a 1x1 value.
Var mse(Var a, Var b);
/// Mean over rows of cos(a_i, b_i), as a 1x1 value. Norms are clamped at
/// 1e-8 so zero rows give cosine 0.
Var cosine_rows_mean(Var a, Var b);
/// Sum of all elements, as a 1x1 value.
Var sum_all(Var a);

// Forward-only kernels shared with callers that work on plain matrices.
Matrix attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                         std::span<const int> q_bucket = {}, std::span<const int> k_bucket = {});
Matrix kernel_attention_forward(const Matrix& fq, const Matrix& fk, const Matrix& v, int heads);
Matrix elu_plus_one(const Matrix& x);

}  // namespace avs::nn
