// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace avs {

struct VideoShape {
  int channels = 0;
  int frames = 0;
  int height = 0;
  int width = 0;

  std::int64_t numel() const {
    return std::int64_t{channels} * frames * height * width;
  }
  bool operator==(const VideoShape&) const = default;
};

struct MelShape {
  int channels = 0;
  int time = 0;
  int freq = 0;

  std::int64_t numel() const { return std::int64_t{channels} * time * freq; }
  bool operator==(const MelShape&) const = default;
};

/// Rank-4 (channels, frames, height, width) float tensor standing in for a
/// video autoencoder latent. Row-major, width fastest.
class VideoLatent {
 public:
  VideoLatent() = default;
  explicit VideoLatent(VideoShape shape, float fill = 0.0f);
  VideoLatent(VideoShape shape, std::vector<float> data);

  const VideoShape& shape() const { return shape_; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  float& at(int c, int f, int y, int x) { return data_[index(c, f, y, x)]; }
  float at(int c, int f, int y, int x) const { return data_[index(c, f, y, x)]; }

  /// Copy of frames [first, first + count) as a (C, count, H, W) latent.
  VideoLatent frames(int first, int count) const;
  /// Overwrites frames starting at `first` with `slice` (same C/H/W).
  void set_frames(int first, const VideoLatent& slice);

  bool operator==(const VideoLatent&) const = default;

 private:
  std::size_t index(int c, int f, int y, int x) const {
    return ((static_cast<std::size_t>(c) * shape_.frames + f) * shape_.height + y) * shape_.width + x;
  }

  VideoShape shape_{};
  std::vector<float> data_;
};

/// Rank-3 (channels, time, frequency) float tensor standing in for a
/// spectrogram autoencoder latent.
class MelLatent {
 public:
  MelLatent() = default;
  explicit MelLatent(MelShape shape, float fill = 0.0f);
  MelLatent(MelShape shape, std::vector<float> data);

  const MelShape& shape() const { return shape_; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  float& at(int c, int t, int f) { return data_[index(c, t, f)]; }
  float at(int c, int t, int f) const { return data_[index(c, t, f)]; }

  MelLatent steps(int first, int count) const;

  bool operator==(const MelLatent&) const = default;

 private:
  std::size_t index(int c, int t, int f) const {
    return (static_cast<std::size_t>(c) * shape_.time + t) * shape_.freq + f;
  }

  MelShape shape_{};
  std::vector<float> data_;
};

enum class SubsetTag : std::uint8_t {
  kTheta = 0,  // high visual quality
  kZeta = 1,   // low visual quality (video loss masked at low noise)
};

using TokenSeq32 = std::vector<std::int32_t>;

struct SampleTuple {
  std::int64_t clip_id = 0;
  VideoLatent video;
  MelLatent audio;
  TokenSeq32 video_caption;
  TokenSeq32 audio_caption;
  TokenSeq32 speech;
  SubsetTag subset = SubsetTag::kTheta;
  /// Clean first frame, shape (C, 1, H, W).
  VideoLatent reference;

  bool operator==(const SampleTuple&) const = default;
};

/// Checks the SampleTuple invariants (reference slice, non-empty tokens).
bool satisfies_invariants(const SampleTuple& sample);

/// Byte-level equality of all tensor payloads and fields (distinguishes -0/+0
/// and compares NaN payloads), used for bit-exact round-trip checks.
bool bitwise_equal(const SampleTuple& a, const SampleTuple& b);

}  // namespace avs
