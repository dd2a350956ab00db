// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "avs/core/config.hpp"
#include "avs/core/types.hpp"
#include "avs/nn/ops.hpp"

namespace avs {

// Conventions: path parameter t runs from noise (t = 0) to data (t = 1);
// NoiseLevel s = 1 - t.

/// x_t = (1 - t) x0 + t x1.
nn::Matrix interpolate_path(const nn::Matrix& x0, const nn::Matrix& x1, double t);
/// u = x1 - x0.
nn::Matrix velocity_target(const nn::Matrix& x0, const nn::Matrix& x1);

/// Mean squared error over all elements.
double fm_loss(const nn::Matrix& pred, const nn::Matrix& target);
nn::Var fm_loss(nn::Var pred, nn::Var target);

/// Whether the video term is computed: always for THETA, for ZETA only when
/// noise_level > tau.
bool video_loss_active(SubsetTag subset, double noise_level, double tau);

/// fm_loss when active, otherwise a constant 0 with no gradient path.
double masked_video_fm_loss(const nn::Matrix& pred, const nn::Matrix& target, SubsetTag subset, double noise_level,
                            double tau);
nn::Var masked_video_fm_loss(nn::Var pred, nn::Var target, SubsetTag subset, double noise_level, double tau);

/// 1 where a patchified video element belongs to latent frame 0.
nn::Matrix first_frame_mask(const ModelConfig& cfg);

/// MSE restricted to elements where `keep` is 1.
nn::Var fm_loss_subset(nn::Var pred, nn::Var target, const nn::Matrix& keep);

struct TeacherFeatures {
  nn::Matrix mert;    // T_m x D_m
  nn::Matrix hubert;  // T_h x D_h
  Rational rate_mert;
  Rational rate_hubert;
};

/// Row-stochastic linear-interpolation matrix (out_len x in_len), sampling
/// at cell centres.
nn::Matrix resample_matrix(int out_len, int in_len);

/// Frozen bias-free random maps from one flattened audio step
/// (channels x freq) to the teacher widths, seeded by teacher_seed.
struct TeacherMaps {
  nn::Matrix mert;    // (C*F) x D_m
  nn::Matrix hubert;  // (C*F) x D_h
};
TeacherMaps teacher_maps(const ModelConfig& cfg, std::uint64_t teacher_seed);

TeacherFeatures teacher_features(const MelLatent& clean_audio, std::uint64_t teacher_seed, const ModelConfig& cfg);
TeacherFeatures teacher_features(const MelLatent& clean_audio, const TeacherMaps& maps, const ModelConfig& cfg);

/// -0.5 (mean_t cos(student_m, teacher_m) + mean_t cos(student_h, teacher_h)).
double ssl_loss(const nn::Matrix& student_mert, const nn::Matrix& student_hubert, const TeacherFeatures& teachers);

struct SslHeads {
  nn::Var mert_w, mert_b, hubert_w, hubert_b;
};

/// Pools the tapped audio hidden state (audio tokens x audio_dim) over
/// frequency tokens, projects through each head, interpolates to the teacher
/// lengths and returns the negative mean cosine similarity.
nn::Var ssl_loss(nn::Var tap, const TeacherFeatures& teachers, const SslHeads& heads, const ModelConfig& cfg);

/// Student features before the cosine (for inspection and tests).
std::pair<nn::Var, nn::Var> ssl_student(nn::Var tap, const TeacherFeatures& teachers, const SslHeads& heads,
                                        const ModelConfig& cfg);

enum class NoiseProvenance { kIndependent, kSharedStream };

struct NoisePair {
  VideoLatent eps_video;
  MelLatent eps_audio;
  NoiseProvenance provenance = NoiseProvenance::kIndependent;
  std::uint64_t seed_video = 0;
  std::uint64_t seed_audio = 0;
};

/// Video noise entirely from RandomStream(seed_v), audio noise entirely from
/// RandomStream(seed_a). Throws SAME_SEED when the seeds coincide.
NoisePair sample_noise_pair(const VideoShape& shape_v, const MelShape& shape_a, std::uint64_t seed_v,
                            std::uint64_t seed_a);

/// Video then audio drawn sequentially from one RandomStream(seed).
NoisePair shared_stream_noise(const VideoShape& shape_v, const MelShape& shape_a, std::uint64_t seed);

/// l_video + l_mel + lambda * l_ssl.
double total_loss(double l_video, double l_mel, double l_ssl, double lambda_ssl);
nn::Var total_loss(nn::Var l_video, nn::Var l_mel, nn::Var l_ssl, double lambda_ssl);

}  // namespace avs
