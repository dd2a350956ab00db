// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/infer/infer.hpp"

#include "avs/core/error.hpp"
#include "avs/experts/patchify.hpp"
#include "avs/synthdata/synthdata.hpp"

namespace avs {

using nn::Matrix;

SampleResult euler_sample(const VelocityField& field, const SampleRequest& request, const ModelConfig& cfg) {
  require(request.steps >= 1, ErrorCode::kRange, "sampler needs at least one step");
  const VideoShape& vg = cfg.video_grid;
  const VideoShape& rs = request.reference.shape();
  require(rs.frames == 1 && rs.channels == vg.channels && rs.height == vg.height && rs.width == vg.width,
          ErrorCode::kShape, "reference must be one frame of the video grid");

  NoisePair noise = request.shared_noise
                        ? shared_stream_noise(vg, cfg.audio_grid, request.seed_video)
                        : sample_noise_pair(vg, cfg.audio_grid, request.seed_video, request.seed_audio);

  VideoLatent ref_full(vg);
  ref_full.set_frames(0, request.reference);
  const Matrix ref_tokens = patchify_video(ref_full, cfg.video_patch).tokens;
  const Matrix mask = first_frame_mask(cfg);
  const Matrix keep = Matrix::Ones(mask.rows(), mask.cols()) - mask;

  TokenSeq video = patchify_video(noise.eps_video, cfg.video_patch);
  TokenSeq audio = patchify_audio(noise.eps_audio, cfg.audio_patch);
  const Matrix eps_tokens = video.tokens;

  auto condition = [&](double t) {
    const Matrix first = request.schedule == ReferenceSchedule::kClean ? ref_tokens
                                                                      : interpolate_path(eps_tokens, ref_tokens, t);
    video.tokens = video.tokens.cwiseProduct(keep) + first.cwiseProduct(mask);
  };

  const double dt = 1.0 / request.steps;
  for (int k = 0; k < request.steps; ++k) {
    const double t = k * dt;
    condition(t);
    auto [vv, va] = field(video.tokens, audio.tokens, 1.0 - t);
    require(vv.rows() == video.tokens.rows() && vv.cols() == video.tokens.cols() && va.rows() == audio.tokens.rows() &&
                va.cols() == audio.tokens.cols(),
            ErrorCode::kShape, "velocity field returned the wrong shape");
    video.tokens += dt * vv;
    audio.tokens += dt * va;
    require(video.tokens.allFinite() && audio.tokens.allFinite(), ErrorCode::kNonFinite,
            "sampler state became non-finite at step " + std::to_string(k));
  }
  condition(1.0);
  // Exact overwrite: float round-trip of interpolated tokens may differ.
  VideoLatent out_video = unpatchify_video(video);
  out_video.set_frames(0, request.reference);
  return {std::move(out_video), unpatchify_audio(audio), std::move(noise)};
}

VelocityField fused_velocity(const FusedModel& model, const Captions32& captions) {
  return [&model, captions](const Matrix& v, const Matrix& a, double s) {
    nn::Tape tape;
    BoundParams p(tape, model.params, false);
    FusedOutput out = fused_forward(p, model, v, a, captions, s);
    return std::make_pair(Matrix(out.video_velocity.value()), Matrix(out.audio_velocity.value()));
  };
}

SampleResult euler_sample(const FusedModel& model, const SampleRequest& request) {
  return euler_sample(fused_velocity(model, request.captions), request, model.cfg);
}

std::vector<double> decode_height(const VideoLatent& video) { return decode_heights(video); }

std::vector<double> decode_pitch(const MelLatent& audio) {
  const std::vector<int> bins = decode_pitch_bins(audio);
  const double denom = audio.shape().freq > 1 ? audio.shape().freq - 1 : 1;
  std::vector<double> out;
  out.reserve(bins.size());
  for (int b : bins) out.push_back(b / denom);
  return out;
}

}  // namespace avs
