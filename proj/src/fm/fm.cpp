// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/fm/fm.hpp"

#include <algorithm>
#include <cmath>

#include "avs/core/error.hpp"
#include "avs/core/rng.hpp"

namespace avs {

using nn::Matrix;
using nn::Var;

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kShape, what);
}

Var zero_scalar(nn::Tape& tape) { return tape.constant(Matrix::Zero(1, 1)); }

double mean_row_cosine(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "cosine operands differ in shape");
  double total = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double na = std::max(a.row(r).norm(), 1e-8);
    const double nb = std::max(b.row(r).norm(), 1e-8);
    total += a.row(r).dot(b.row(r)) / (na * nb);
  }
  return a.rows() > 0 ? total / static_cast<double>(a.rows()) : 0.0;
}

}  // namespace

Matrix interpolate_path(const Matrix& x0, const Matrix& x1, double t) {
  require_same_shape(x0, x1, "path endpoints differ in shape");
  require(t >= 0.0 && t <= 1.0, ErrorCode::kRange, "path time outside [0, 1]");
  return (1.0 - t) * x0 + t * x1;
}

Matrix velocity_target(const Matrix& x0, const Matrix& x1) {
  require_same_shape(x0, x1, "path endpoints differ in shape");
  return x1 - x0;
}

double fm_loss(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "prediction and target differ in shape");
  require(pred.size() > 0, ErrorCode::kShape, "empty loss operands");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

Var fm_loss(Var pred, Var target) {
  require_same_shape(pred.value(), target.value(), "prediction and target differ in shape");
  return nn::mse(pred, target);
}

bool video_loss_active(SubsetTag subset, double noise_level, double tau) {
  return subset == SubsetTag::kTheta || noise_level > tau;
}

double masked_video_fm_loss(const Matrix& pred, const Matrix& target, SubsetTag subset, double noise_level,
                            double tau) {
  require_same_shape(pred, target, "prediction and target differ in shape");
  return video_loss_active(subset, noise_level, tau) ? fm_loss(pred, target) : 0.0;
}

Var masked_video_fm_loss(Var pred, Var target, SubsetTag subset, double noise_level, double tau) {
  require_same_shape(pred.value(), target.value(), "prediction and target differ in shape");
  if (!video_loss_active(subset, noise_level, tau)) return zero_scalar(pred.tape());
  return nn::mse(pred, target);
}

Matrix first_frame_mask(const ModelConfig& cfg) {
  const auto [pt, ph, pw] = cfg.video_patch;
  const int nh = cfg.video_grid.height / ph;
  const int nw = cfg.video_grid.width / pw;
  Matrix mask = Matrix::Zero(cfg.video_token_count(), cfg.video_patch_width());
  // Features are ordered (c, dt, dy, dx); only the first patch frame and
  // dt == 0 hold latent frame 0.
  for (int row = 0; row < nh * nw; ++row) {
    for (int c = 0; c < cfg.video_grid.channels; ++c) {
      for (int d = 0; d < ph * pw; ++d) mask(row, (c * pt) * ph * pw + d) = 1.0;
    }
  }
  return mask;
}

Var fm_loss_subset(Var pred, Var target, const Matrix& keep) {
  require_same_shape(pred.value(), target.value(), "prediction and target differ in shape");
  require_same_shape(pred.value(), keep, "mask differs in shape");
  const double count = keep.sum();
  require(count > 0.0, ErrorCode::kShape, "mask keeps no elements");
  Var k = pred.tape().constant(keep);
  Var diff = nn::mul(nn::sub(pred, target), k);
  return nn::scale(nn::sum_all(nn::mul(diff, diff)), 1.0 / count);
}

Matrix resample_matrix(int out_len, int in_len) {
  require(out_len > 0 && in_len > 0, ErrorCode::kRange, "resample lengths must be positive");
  Matrix r = Matrix::Zero(out_len, in_len);
  const double step = static_cast<double>(in_len) / out_len;
  for (int i = 0; i < out_len; ++i) {
    const double pos = std::clamp((i + 0.5) * step - 0.5, 0.0, static_cast<double>(in_len - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, in_len - 1);
    const double w = pos - lo;
    r(i, lo) += 1.0 - w;
    r(i, hi) += w;
  }
  return r;
}

TeacherMaps teacher_maps(const ModelConfig& cfg, std::uint64_t teacher_seed) {
  const int in = cfg.audio_grid.channels * cfg.audio_grid.freq;
  TeacherMaps maps{Matrix(in, cfg.teacher_mert_dim), Matrix(in, cfg.teacher_hubert_dim)};
  RandomStream rng(mix_seed(teacher_seed, 0x7EAC));
  rng.fill_normal(std::span<double>(maps.mert.data(), static_cast<std::size_t>(maps.mert.size())));
  rng.fill_normal(std::span<double>(maps.hubert.data(), static_cast<std::size_t>(maps.hubert.size())));
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  maps.mert *= s;
  maps.hubert *= s;
  return maps;
}

TeacherFeatures teacher_features(const MelLatent& clean_audio, std::uint64_t teacher_seed, const ModelConfig& cfg) {
  return teacher_features(clean_audio, teacher_maps(cfg, teacher_seed), cfg);
}

TeacherFeatures teacher_features(const MelLatent& clean_audio, const TeacherMaps& maps, const ModelConfig& cfg) {
  const MelShape& sh = clean_audio.shape();
  require(sh == cfg.audio_grid, ErrorCode::kShape, "audio latent does not match the configured grid");
  Matrix steps(sh.time, sh.channels * sh.freq);
  for (int t = 0; t < sh.time; ++t) {
    for (int c = 0; c < sh.channels; ++c) {
      for (int f = 0; f < sh.freq; ++f) steps(t, c * sh.freq + f) = clean_audio.at(c, t, f);
    }
  }
  TeacherFeatures out;
  out.mert = resample_matrix(cfg.mert_steps(), sh.time) * (steps * maps.mert);
  out.hubert = resample_matrix(cfg.hubert_steps(), sh.time) * (steps * maps.hubert);
  out.rate_mert = cfg.mert_steps_per_frame;
  out.rate_hubert = cfg.hubert_steps_per_frame;
  return out;
}

double ssl_loss(const Matrix& student_mert, const Matrix& student_hubert, const TeacherFeatures& teachers) {
  return -0.5 * (mean_row_cosine(student_mert, teachers.mert) + mean_row_cosine(student_hubert, teachers.hubert));
}

std::pair<Var, Var> ssl_student(Var tap, const TeacherFeatures& teachers, const SslHeads& heads,
                                const ModelConfig& cfg) {
  const int n_t = cfg.audio_grid.time / cfg.audio_patch[0];
  const int n_q = cfg.audio_grid.freq / cfg.audio_patch[1];
  require(tap.rows() == n_t * n_q, ErrorCode::kShape, "tap does not hold the audio token sequence");
  Matrix pool = Matrix::Zero(n_t, n_t * n_q);
  for (int t = 0; t < n_t; ++t) pool.block(t, t * n_q, 1, n_q).setConstant(1.0 / n_q);
  nn::Tape& tape = tap.tape();
  Var pooled = nn::matmul(tape.constant(std::move(pool)), tap);
  Var m = nn::matmul(tape.constant(resample_matrix(static_cast<int>(teachers.mert.rows()), n_t)),
                     nn::linear(pooled, heads.mert_w, heads.mert_b));
  Var h = nn::matmul(tape.constant(resample_matrix(static_cast<int>(teachers.hubert.rows()), n_t)),
                     nn::linear(pooled, heads.hubert_w, heads.hubert_b));
  return {m, h};
}

Var ssl_loss(Var tap, const TeacherFeatures& teachers, const SslHeads& heads, const ModelConfig& cfg) {
  auto [m, h] = ssl_student(tap, teachers, heads, cfg);
  nn::Tape& tape = tap.tape();
  Var cm = nn::cosine_rows_mean(m, tape.constant(teachers.mert));
  Var ch = nn::cosine_rows_mean(h, tape.constant(teachers.hubert));
  return nn::scale(nn::add(cm, ch), -0.5);
}

NoisePair sample_noise_pair(const VideoShape& shape_v, const MelShape& shape_a, std::uint64_t seed_v,
                            std::uint64_t seed_a) {
  require(seed_v != seed_a, ErrorCode::kSameSeed, "video and audio noise seeds must differ");
  NoisePair pair{VideoLatent(shape_v), MelLatent(shape_a), NoiseProvenance::kIndependent, seed_v, seed_a};
  RandomStream rv(seed_v);
  rv.fill_normal(pair.eps_video.data());
  RandomStream ra(seed_a);
  ra.fill_normal(pair.eps_audio.data());
  return pair;
}

NoisePair shared_stream_noise(const VideoShape& shape_v, const MelShape& shape_a, std::uint64_t seed) {
  NoisePair pair{VideoLatent(shape_v), MelLatent(shape_a), NoiseProvenance::kSharedStream, seed, seed};
  RandomStream rng(seed);
  rng.fill_normal(pair.eps_video.data());
  rng.fill_normal(pair.eps_audio.data());
  return pair;
}

double total_loss(double l_video, double l_mel, double l_ssl, double lambda_ssl) {
  return l_video + l_mel + lambda_ssl * l_ssl;
}

Var total_loss(Var l_video, Var l_mel, Var l_ssl, double lambda_ssl) {
  Var sum = nn::add(l_video, l_mel);
  return lambda_ssl == 0.0 ? sum : nn::add(sum, nn::scale(l_ssl, lambda_ssl));
}

}  // namespace avs
