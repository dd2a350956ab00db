// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/experts/block.hpp"
#include "avs/experts/weights.hpp"

namespace avs {

/// Per-depth connector between the two streams, named relative to
/// "connector.<i>.":
///   a2v.{w1,w2}, v2a.{w1,w2}   bias-free two-layer adapters
///   norm.{g,b}                 shared LayerNorm on the audio->video path
///   vself.{k,v}                video self-attention injection
///   vcross.{k,v}               video cross-attention injection
///   across.{k,v}               audio cross-attention injection
/// Every *.v projection starts at zero.
struct ConnectorWeights {
  ParamMap params;
};

ConnectorWeights init_connector(const ModelConfig& cfg, RandomStream& rng);

/// Number of original blocks preceding each inserted block, in insertion
/// order: floor((i+1) * len / (gaps+1)) clamped to [1, len-1].
std::vector<int> insertion_points(int len, int target_depth);

/// Expands `blocks` to `target_depth` by inserting elementwise means of the
/// bracketing original blocks. Throws DEPTH when target < len (or when len < 2
/// and an insertion is needed) and NAME_MISMATCH when bracketing blocks do
/// not share parameter names and shapes.
std::vector<BlockWeights> interpolate_layers(const std::vector<BlockWeights>& blocks, int target_depth);

/// The stitched model. All parameters live in one flat map:
///   video.*, video.block.<i>.*, audio.*, audio.block.<i>.*,
///   connector.<i>.*, text.embed, ssl.{mert,hubert}.{w,b}
struct FusedModel {
  ModelConfig cfg;
  int depth = 0;
  int ssl_tap = 0;
  ParamMap params;
  /// For each stream, whether fused block i came from interpolation.
  std::vector<bool> video_inserted;
  std::vector<bool> audio_inserted;

  BlockWeights video_block(int i) const;
  BlockWeights audio_block(int i) const;
  ConnectorWeights connector(int i) const;
};

/// Stitches two experts. The shallower stack is interpolated to the deeper
/// one's depth; connectors and SSL heads are initialised from `seed`.
FusedModel build_fused_model(const ModelConfig& cfg, const ExpertWeights& video, const ExpertWeights& audio,
                             const nn::Matrix& text_embed, std::uint64_t seed);

/// Fresh experts plus stitching, all from one seed.
FusedModel init_fused_model(const ModelConfig& cfg, std::uint64_t seed);

/// Plain-matrix frame-bucketed injection: video query i attends only to audio
/// tokens whose latent step index lies in [f*ratio, (f+1)*ratio) for its
/// frame f. Returns attention(q, audio k_proj, audio v_proj). Throws RATIO
/// when an audio token falls outside every frame's bucket.
nn::Matrix frame_bucketed_cross_attention(const nn::Matrix& video_queries, std::span<const int> video_frames,
                                          const nn::Matrix& audio_tokens, std::span<const int> audio_steps,
                                          int ratio, const nn::Matrix& k_proj, const nn::Matrix& v_proj,
                                          int heads = 1);

/// Per-forward constants shared by every fused block.
struct FusedContext {
  const ModelConfig* cfg = nullptr;
  nn::Var video_text;
  nn::Var audio_cond;
  nn::Var video_time;
  nn::Var audio_time;
  std::vector<int> video_buckets;
  std::vector<int> audio_buckets;
};

/// One fused depth: audio linear attention, then the video block with audio
/// injected into both attentions, then the rest of the audio block with
/// video injected into its cross-attention.
std::pair<nn::Var, nn::Var> fused_block_forward(nn::Var video_tokens, nn::Var audio_tokens, const FusedContext& ctx,
                                                const BoundParams& p, int index);

struct FusedOutput {
  nn::Var video_velocity;
  nn::Var audio_velocity;
  /// Audio hidden state after block `ssl_tap`.
  nn::Var ssl_tap;
};

/// Full forward on patchified inputs.
FusedOutput fused_forward(const BoundParams& p, const FusedModel& model, const nn::Matrix& video_patches,
                          const nn::Matrix& audio_patches, const Captions32& captions, double noise_level);

void save_model(const FusedModel& model, const std::filesystem::path& path);
/// Loads parameters saved by save_model; `cfg` must describe the same shapes.
FusedModel load_model(const ModelConfig& cfg, const std::filesystem::path& path);

}  // namespace avs
