// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/core/rng.hpp"
#include "avs/core/types.hpp"
#include "avs/synthdata/vocab.hpp"

namespace avs {

/// A ball bouncing inside the unit square. `y` is height (1 = top row).
struct BallWorld {
  double x = 0.5;
  double y = 0.5;
  double vx = 0.0;
  double vy = 0.0;
  /// Blob standard deviation as a fraction of the grid height.
  double radius = 0.1;

  /// Advances one frame, reflecting off the walls of [0,1]^2.
  void step();
};

struct Position {
  double x = 0.5;
  double y = 0.5;
};

/// Positions at frames 0..frames-1 (the first entry is the start state).
std::vector<Position> ball_trajectory(BallWorld ball, int frames);

/// Random start state: uniform position, one of the configured speeds and a
/// heading whose vertical component is at least `min_vertical`.
BallWorld random_ball(RandomStream& rng, const DataConfig& data, int grid_height);

/// Per-channel blob gains; all positive so the channel sum keeps the blob.
float channel_gain(int channel, int channels);

/// Renders a Gaussian blob per frame.
VideoLatent render_video(const std::vector<Position>& trajectory, const VideoShape& shape, double blob_sigma);

/// Ball position recovered from one frame: intensity-weighted centroid of the
/// channel sum over cells above 25% of the frame peak. A frame without any
/// positive cell decodes to the centre (0.5, 0.5).
Position decode_position(const VideoLatent& video, int frame);

/// Heights of every frame, in [0,1].
std::vector<double> decode_heights(const VideoLatent& video);

/// Pitch bin for a height: round(h * (bins - 1)).
int pitch_bin(double height, int bins);

/// One-hot pitch track: every audio step inside video frame f holds unit
/// energy (all channels) at pitch_bin(heights[f]).
MelLatent render_audio(const std::vector<double>& heights, const MelShape& shape, const Rational& ratio);

/// Argmax frequency bin (channel sum) per audio step.
std::vector<int> decode_pitch_bins(const MelLatent& audio);

/// Caption classes derived from decoded latents.
struct ClipClasses {
  vocab::Quadrant quadrant = vocab::Quadrant::kUpperLeft;
  vocab::SpeedClass speed = vocab::SpeedClass::kSlow;
  vocab::PitchDirection pitch = vocab::PitchDirection::kFlat;

  bool operator==(const ClipClasses&) const = default;
};

ClipClasses classify_clip(const VideoLatent& video, const MelLatent& audio, const DataConfig& data);

struct Captions {
  TokenSeq32 video;
  TokenSeq32 audio;
  TokenSeq32 speech;

  bool operator==(const Captions&) const = default;
};

Captions captions_for(const ClipClasses& classes);

/// Generates one clean pair. Pure function of (seed, cfg, data).
SampleTuple gen_pair(std::uint64_t seed, const ModelConfig& cfg, const DataConfig& data = {});

/// Pair generated from an explicit start state (no randomness).
SampleTuple gen_pair_from(const BallWorld& ball, std::int64_t clip_id, const ModelConfig& cfg,
                          const DataConfig& data = {});

/// Adds N(0, sigma^2) noise to the video latent only and tags the copy ZETA.
SampleTuple degrade(const SampleTuple& sample, std::uint64_t seed, double sigma);

struct DatasetInfo {
  std::vector<std::filesystem::path> shards;
  std::filesystem::path manifest;
  std::size_t n_theta = 0;
  std::size_t n_zeta = 0;
  /// Payload checksum per shard, in shard order.
  std::vector<std::uint64_t> checksums;
};

inline constexpr std::size_t kSamplesPerShard = 256;

/// n_clean THETA samples followed by n_degraded ZETA samples, in memory.
std::vector<SampleTuple> make_dataset(std::size_t n_clean, std::size_t n_degraded, std::uint64_t seed,
                                      const Config& cfg);

/// Writes n_clean THETA and n_degraded ZETA samples as shard files plus a
/// manifest (`clip_id subset` per line) under `dir`.
DatasetInfo build_dataset(std::size_t n_clean, std::size_t n_degraded, std::uint64_t seed, const Config& cfg,
                          const std::filesystem::path& dir);

/// Reads every shard listed by build_dataset in `dir`.
std::vector<SampleTuple> load_dataset(const std::filesystem::path& dir);

}  // namespace avs
