// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/core/rng.hpp"
#include "avs/nn/tape.hpp"

namespace avs {

/// Flat name -> tensor map. Ordered, so iteration order is deterministic.
using ParamMap = std::map<std::string, nn::Matrix>;

enum class StreamKind { kVideo, kAudio };

std::string_view stream_prefix(StreamKind kind);  // "video" / "audio"
int stream_dim(StreamKind kind, const ModelConfig& cfg);
int stream_heads(StreamKind kind, const ModelConfig& cfg);

/// Parameters of one transformer block, named relative to the block:
///   ada.{w,b}                 time modulation, 9 chunks of width D:
///                             shift/scale/gate for self-attn, cross-attn, ffn
///   attn.{q,k,v,o}.{w,b}      self-attention (linear attention for audio)
///   cross.{q,k,v,o}.{w,b}     cross-attention to caption embeddings
///   ffn.{w1,b1,w2,b2}
struct BlockWeights {
  ParamMap params;

  const nn::Matrix& at(const std::string& name) const;
  nn::Matrix& at(const std::string& name);
  bool all_finite() const;
  bool operator==(const BlockWeights&) const = default;
};

inline constexpr int kAdaChunks = 9;
/// Chunk index of each gate inside ada.
inline constexpr int kGateChunks[3] = {2, 5, 8};

BlockWeights init_block(StreamKind kind, const ModelConfig& cfg, RandomStream& rng);

/// Zeroes the gate columns of ada.w and ada.b, turning the block into the
/// identity on tokens.
void zero_gates(BlockWeights& w);

/// One unimodal expert: stream-level parameters plus its block stack.
/// Stream names: in.{w,b}, pos, time.{w1,b1,w2,b2}, final.ada.{w,b}, out.{w,b}.
struct ExpertWeights {
  StreamKind kind = StreamKind::kVideo;
  ParamMap stream;
  std::vector<BlockWeights> blocks;
};

ExpertWeights init_expert(StreamKind kind, const ModelConfig& cfg, std::uint64_t seed);

/// Shared caption embedding table, vocab_size x text_dim.
nn::Matrix init_text_embedding(const ModelConfig& cfg, std::uint64_t seed);

/// Copies every entry of `src` into `dst` under `prefix + name`.
void insert_prefixed(ParamMap& dst, const std::string& prefix, const ParamMap& src);
/// Entries of `src` whose name starts with `prefix`, with the prefix removed.
ParamMap extract_prefixed(const ParamMap& src, const std::string& prefix);

/// Flat map for a standalone expert: "<stream>.<name>" and
/// "<stream>.block.<i>.<name>".
ParamMap flatten_expert(const ExpertWeights& expert);

/// Sinusoidal embedding of a noise level in [0,1], 1 x dim.
nn::Matrix timestep_embedding(double noise_level, int dim);

/// Embedding rows for a token sequence (plain lookup).
nn::Matrix embed_tokens(const nn::Matrix& table, const std::vector<std::int32_t>& tokens);

}  // namespace avs
