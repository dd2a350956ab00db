// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/core/types.hpp"
#include "avs/experts/block.hpp"
#include "avs/fm/fm.hpp"
#include "avs/soe/soe.hpp"

namespace avs {

struct SampleRequest {
  VideoLatent reference;  // one frame
  Captions32 captions;
  std::uint64_t seed_video = 1;
  std::uint64_t seed_audio = 2;
  int steps = 50;
  ReferenceSchedule schedule = ReferenceSchedule::kClean;
  /// Draw both noises from one stream (the ablated sampler).
  bool shared_noise = false;
};

/// Velocity field on patchified tokens: (video tokens, audio tokens, noise
/// level s) -> (video velocity, audio velocity).
using VelocityField =
    std::function<std::pair<nn::Matrix, nn::Matrix>(const nn::Matrix&, const nn::Matrix&, double)>;

struct SampleResult {
  VideoLatent video;
  MelLatent audio;
  NoisePair noise;
};

/// Euler integration from t = 0 (noise) to t = 1 (data) with uniform steps.
/// Before each evaluation the first video frame is set from the reference
/// according to the schedule; after the last step it is set to the
/// reference exactly. Throws NONFINITE if the state stops being finite.
SampleResult euler_sample(const VelocityField& field, const SampleRequest& request, const ModelConfig& cfg);

/// Fused-model velocity field (no gradient tape kept between evaluations).
VelocityField fused_velocity(const FusedModel& model, const Captions32& captions);

SampleResult euler_sample(const FusedModel& model, const SampleRequest& request);

/// Blob height per video frame in [0, 1]; 0.5 for an all-zero frame.
std::vector<double> decode_height(const VideoLatent& video);

/// Argmax frequency bin per audio step, normalized by (freq - 1).
std::vector<double> decode_pitch(const MelLatent& audio);

}  // namespace avs
