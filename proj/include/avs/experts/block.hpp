// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/experts/weights.hpp"
#include "avs/nn/ops.hpp"

namespace avs {

/// Parameters placed on a tape, looked up by full flat name.
class BoundParams {
 public:
  /// Binds every entry of `params` by reference; gradients are tracked when
  /// `trainable` is set. `params` must outlive the tape.
  BoundParams(nn::Tape& tape, const ParamMap& params, bool trainable);

  nn::Var operator()(const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  const std::map<std::string, nn::Var>& vars() const { return vars_; }
  nn::Tape& tape() const { return *tape_; }

 private:
  nn::Tape* tape_;
  std::map<std::string, nn::Var> vars_;
};

/// A prefix-scoped view, e.g. "video.block.3.".
struct ParamView {
  const BoundParams* params = nullptr;
  std::string prefix;

  nn::Var operator()(const std::string& name) const { return (*params)(prefix + name); }
};

// Plain-matrix attention primitives (single call, no tape).
/// Softmax attention; rows of the attention matrix sum to 1.
nn::Matrix attention(const nn::Matrix& q, const nn::Matrix& k, const nn::Matrix& v, int heads = 1);
/// phi(q) (phi(k)^T v) / (phi(q) . sum_j phi(k_j)) with phi = elu + 1.
nn::Matrix linear_attention(const nn::Matrix& q, const nn::Matrix& k, const nn::Matrix& v, int heads = 1);

/// Audio context injected into a video block. `audio` is the adapted audio
/// hidden state after the shared LayerNorm (Na x video_dim).
struct VideoInjection {
  nn::Var audio;
  nn::Var self_k, self_v;    // frame-bucketed self-attention injection
  nn::Var cross_k, cross_v;  // cross-attention injection
  nn::Var norm_g, norm_b;    // shared LayerNorm, reused for the video queries
  std::span<const int> video_buckets;
  std::span<const int> audio_buckets;
};

/// Video context injected into an audio block's cross-attention. `video` is
/// the adapted video hidden state (Nv x audio_dim).
struct AudioInjection {
  nn::Var video;
  nn::Var k, v;
  // Empty spans leave the injection global over all video tokens.
  std::span<const int> audio_buckets;
  std::span<const int> video_buckets;
};

/// Affine LayerNorm with 1 x D gain/bias.
nn::Var affine_layer_norm(nn::Var x, nn::Var g, nn::Var b);

/// Time-conditioning row for a stream: silu(MLP(sinusoidal(s))).
nn::Var stream_time(nn::Var embedding, const ParamView& stream);

/// Input projection plus learned positions.
nn::Var stream_input(nn::Var patches, const ParamView& stream);

/// Final modulated LayerNorm and projection back to patch width.
nn::Var stream_output(nn::Var hidden, nn::Var time_cond, const ParamView& stream);

struct VideoBlockOut {
  nn::Var out;
  /// Hidden state right after the self-attention sub-layer.
  nn::Var after_self;
};

/// Video block: softmax self-attention, caption cross-attention, FFN, each
/// residual and gated by the time modulation. `audio_ctx == nullptr` is the
/// pure expert path.
VideoBlockOut video_block(nn::Var tokens, nn::Var text, nn::Var time_cond, const ParamView& w, int heads,
                          const VideoInjection* audio_ctx = nullptr);

/// State between the two halves of an audio block.
struct AudioBlockState {
  nn::Var mod;
  /// Hidden state right after the linear-attention sub-layer.
  nn::Var after_self;
};

AudioBlockState audio_block_self(nn::Var tokens, nn::Var time_cond, const ParamView& w, int heads);
nn::Var audio_block_finish(const AudioBlockState& state, nn::Var cond, const ParamView& w, int heads,
                           const AudioInjection* video_ctx = nullptr);

/// Audio block: linear self-attention, condition cross-attention, FFN.
nn::Var audio_block(nn::Var tokens, nn::Var cond, nn::Var time_cond, const ParamView& w, int heads,
                    const AudioInjection* video_ctx = nullptr);

/// Caption conditioning: the video stream sees its caption; the audio
/// stream sees the three captions concatenated along the sequence axis.
struct Captions32 {
  std::vector<int> video;
  std::vector<int> audio;
  std::vector<int> speech;
};

nn::Var video_text(const BoundParams& p, const Captions32& captions);
nn::Var audio_condition(const BoundParams& p, const Captions32& captions);

struct ExpertOutput {
  nn::Var velocity;
  /// Output of every block, in order.
  std::vector<nn::Var> hidden;
};

/// Standalone expert forward on patchified tokens. Expects names
/// "<stream>.*", "<stream>.block.<i>.*" and "text.embed" in `p`.
ExpertOutput expert_forward(const BoundParams& p, StreamKind kind, const ModelConfig& cfg, int depth,
                            const nn::Matrix& patches, const Captions32& captions, double noise_level);

}  // namespace avs
