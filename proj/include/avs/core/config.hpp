// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avs/core/types.hpp"

namespace avs {

/// Exact non-negative rational, kept in lowest terms.
struct Rational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  static Rational make(std::int64_t num, std::int64_t den);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  static Rational parse(const std::string& text);
  bool operator==(const Rational&) const = default;
};

struct ModelConfig {
  int video_depth = 4;
  int audio_depth = 6;
  int video_dim = 64;
  int audio_dim = 64;
  int text_dim = 32;
  int video_heads = 4;
  int audio_heads = 4;
  int ffn_hidden = 128;
  int adapter_hidden = 32;
  int time_embed_dim = 32;
  int vocab_size = 64;
  // Audio block index whose output feeds the semantic alignment heads.
  int fusion_layer_ssl = 2;
  int frames_per_clip = 16;
  VideoShape video_grid{8, 16, 4, 4};
  MelShape audio_grid{4, 64, 8};
  std::array<int, 3> video_patch{1, 2, 2};
  std::array<int, 2> audio_patch{4, 2};
  // Audio latent steps per video latent frame.
  Rational temporal_ratio{4, 1};
  // Restrict the video->audio injection to each audio token's co-located frame.
  bool v2a_frame_bucketed = true;
  double tau_mask = 0.8;
  double lambda_ssl = 1.0;
  std::uint64_t seed_video_noise = 1001;
  std::uint64_t seed_audio_noise = 2002;

  // Frozen stand-in teachers for the semantic alignment loss. Rates are in
  // teacher steps per video frame (75 Hz and 50 Hz against 25 fps video).
  int teacher_mert_dim = 32;
  int teacher_hubert_dim = 24;
  Rational mert_steps_per_frame{3, 1};
  Rational hubert_steps_per_frame{2, 1};
  std::uint64_t teacher_seed = 77;

  int video_token_count() const;
  int audio_token_count() const;
  int video_patch_width() const;
  int audio_patch_width() const;
  int fused_depth() const { return video_depth > audio_depth ? video_depth : audio_depth; }
  int mert_steps() const;
  int hubert_steps() const;
};

struct DataConfig {
  double degrade_sigma = 0.5;
  // Per-frame displacement magnitudes for the three speed classes.
  std::array<double, 3> speeds{0.25, 0.4, 0.55};
  // Lower bound on |sin(heading)| so every clip moves vertically.
  double min_vertical = 0.5;
  // Blob standard deviation in latent grid cells.
  double blob_sigma = 0.6;
};

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int batch = 8;
  int grad_accum = 4;
  int steps = 2000;
  int checkpoint_every = 500;
  std::uint64_t seed_init = 42;
  std::uint64_t seed_timestep = 3003;
  std::uint64_t seed_data_order = 4004;
  double loss_ema_decay = 0.98;
};

enum class ReferenceSchedule { kClean, kPath };

struct SamplerConfig {
  int steps = 50;
  ReferenceSchedule reference_schedule = ReferenceSchedule::kClean;
};

struct PipelineConfig {
  int capacity = 32;
  int num_sources = 16;
  int source_frames = 128;
};

struct Config {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  SamplerConfig sampler;
  PipelineConfig pipeline;
};

/// Returns `cfg` unchanged when every ModelConfig invariant holds; throws
/// avs::Error (DIVISIBILITY, RATIO or RANGE) otherwise.
ModelConfig validate_config(const ModelConfig& cfg);

/// Validates the whole tree (model plus training/sampler/pipeline ranges).
Config validate_config(const Config& cfg);

/// The configuration the project ships with.
Config default_config();

/// Training hyper-parameters reported for the full-size model.
Config paper_scale_config();

/// Replaces every PRNG seed in `cfg` (init, timestep, data order, both noise
/// streams, teachers) with one derived from `seed`.
Config with_seed(Config cfg, std::uint64_t seed);

Config load_config(const std::filesystem::path& path);
void save_config(const Config& cfg, const std::filesystem::path& path);
std::string config_to_json(const Config& cfg);
Config config_from_json(const std::string& text);

}  // namespace avs
