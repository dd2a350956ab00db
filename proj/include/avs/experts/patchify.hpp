// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/core/types.hpp"
#include "avs/nn/tape.hpp"

namespace avs {

/// How a token matrix maps back onto its latent grid.
struct TokenLayout {
  enum class Kind { kVideo, kAudio } kind = Kind::kVideo;
  VideoShape video{};
  MelShape audio{};
  std::array<int, 3> video_patch{1, 1, 1};
  std::array<int, 2> audio_patch{1, 1};
};

/// Rows are tokens; within a row the patch is flattened channel-major.
/// Video tokens are ordered (frame, row, col) over patch positions; audio
/// tokens (time, frequency).
struct TokenSeq {
  nn::Matrix tokens;
  TokenLayout layout;
};

TokenSeq patchify_video(const VideoLatent& v, const std::array<int, 3>& patch);
VideoLatent unpatchify_video(const TokenSeq& seq);
TokenSeq patchify_audio(const MelLatent& m, const std::array<int, 2>& patch);
MelLatent unpatchify_audio(const TokenSeq& seq);

/// Patch-frame index of every video token (the frame bucket it belongs to).
std::vector<int> video_token_buckets(const ModelConfig& cfg);
/// Frame bucket of every audio token: the video patch-frame whose
/// temporal_ratio-scaled span contains the token's latent steps.
std::vector<int> audio_token_buckets(const ModelConfig& cfg);

}  // namespace avs
