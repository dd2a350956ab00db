// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/experts/weights.hpp"

#include <cmath>

#include "avs/core/error.hpp"
#include "avs/experts/patchify.hpp"

namespace avs {
namespace {

nn::Matrix normal(RandomStream& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  nn::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

nn::Matrix glorot(RandomStream& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  return normal(rng, fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

nn::Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return nn::Matrix::Zero(rows, cols); }

}  // namespace

std::string_view stream_prefix(StreamKind kind) { return kind == StreamKind::kVideo ? "video" : "audio"; }

int stream_dim(StreamKind kind, const ModelConfig& cfg) {
  return kind == StreamKind::kVideo ? cfg.video_dim : cfg.audio_dim;
}

int stream_heads(StreamKind kind, const ModelConfig& cfg) {
  return kind == StreamKind::kVideo ? cfg.video_heads : cfg.audio_heads;
}

const nn::Matrix& BlockWeights::at(const std::string& name) const {
  const auto it = params.find(name);
  require(it != params.end(), ErrorCode::kNameMismatch, "block has no parameter '" + name + "'");
  return it->second;
}

nn::Matrix& BlockWeights::at(const std::string& name) {
  const auto it = params.find(name);
  require(it != params.end(), ErrorCode::kNameMismatch, "block has no parameter '" + name + "'");
  return it->second;
}

bool BlockWeights::all_finite() const {
  for (const auto& [name, m] : params) {
    if (!m.allFinite()) return false;
  }
  return true;
}

BlockWeights init_block(StreamKind kind, const ModelConfig& cfg, RandomStream& rng) {
  const int d = stream_dim(kind, cfg);
  const int t = cfg.text_dim;
  const int h = cfg.ffn_hidden;
  BlockWeights w;
  auto& p = w.params;
  // Modulation starts small so blocks begin close to (but not exactly) the
  // identity.
  p["ada.w"] = normal(rng, d, kAdaChunks * d, 0.1 / std::sqrt(static_cast<double>(d)));
  p["ada.b"] = normal(rng, 1, kAdaChunks * d, 0.1);
  for (const char* name : {"attn.q", "attn.k", "attn.v", "attn.o", "cross.q", "cross.o"}) {
    p[std::string(name) + ".w"] = glorot(rng, d, d);
    p[std::string(name) + ".b"] = zeros(1, d);
  }
  for (const char* name : {"cross.k", "cross.v"}) {
    p[std::string(name) + ".w"] = glorot(rng, t, d);
    p[std::string(name) + ".b"] = zeros(1, d);
  }
  p["ffn.w1"] = glorot(rng, d, h);
  p["ffn.b1"] = zeros(1, h);
  p["ffn.w2"] = glorot(rng, h, d);
  p["ffn.b2"] = zeros(1, d);
  return w;
}

void zero_gates(BlockWeights& w) {
  nn::Matrix& aw = w.at("ada.w");
  nn::Matrix& ab = w.at("ada.b");
  const Eigen::Index d = aw.cols() / kAdaChunks;
  for (int chunk : kGateChunks) {
    aw.middleCols(chunk * d, d).setZero();
    ab.middleCols(chunk * d, d).setZero();
  }
}

ExpertWeights init_expert(StreamKind kind, const ModelConfig& cfg, std::uint64_t seed) {
  RandomStream rng(mix_seed(seed, kind == StreamKind::kVideo ? 0x71D : 0xA0D));
  ExpertWeights e;
  e.kind = kind;
  const int d = stream_dim(kind, cfg);
  const int patch = kind == StreamKind::kVideo ? cfg.video_patch_width() : cfg.audio_patch_width();
  const int tokens = kind == StreamKind::kVideo ? cfg.video_token_count() : cfg.audio_token_count();
  const int te = cfg.time_embed_dim;
  auto& s = e.stream;
  s["in.w"] = glorot(rng, patch, d);
  s["in.b"] = zeros(1, d);
  s["pos"] = normal(rng, tokens, d, 0.1);
  s["time.w1"] = glorot(rng, te, d);
  s["time.b1"] = zeros(1, d);
  s["time.w2"] = glorot(rng, d, d);
  s["time.b2"] = zeros(1, d);
  s["final.ada.w"] = normal(rng, d, 2 * d, 0.1 / std::sqrt(static_cast<double>(d)));
  s["final.ada.b"] = zeros(1, 2 * d);
  s["out.w"] = glorot(rng, d, patch);
  s["out.b"] = zeros(1, patch);
  const int depth = kind == StreamKind::kVideo ? cfg.video_depth : cfg.audio_depth;
  for (int i = 0; i < depth; ++i) e.blocks.push_back(init_block(kind, cfg, rng));
  return e;
}

nn::Matrix init_text_embedding(const ModelConfig& cfg, std::uint64_t seed) {
  RandomStream rng(mix_seed(seed, 0x7E47));
  return normal(rng, cfg.vocab_size, cfg.text_dim, 1.0);
}

void insert_prefixed(ParamMap& dst, const std::string& prefix, const ParamMap& src) {
  for (const auto& [name, m] : src) dst[prefix + name] = m;
}

ParamMap extract_prefixed(const ParamMap& src, const std::string& prefix) {
  ParamMap out;
  for (auto it = src.lower_bound(prefix); it != src.end() && it->first.starts_with(prefix); ++it) {
    out[it->first.substr(prefix.size())] = it->second;
  }
  return out;
}

ParamMap flatten_expert(const ExpertWeights& expert) {
  ParamMap out;
  const std::string root(stream_prefix(expert.kind));
  insert_prefixed(out, root + ".", expert.stream);
  for (std::size_t i = 0; i < expert.blocks.size(); ++i) {
    insert_prefixed(out, root + ".block." + std::to_string(i) + ".", expert.blocks[i].params);
  }
  return out;
}

nn::Matrix timestep_embedding(double noise_level, int dim) {
  require(dim % 2 == 0, ErrorCode::kShape, "embedding width must be even");
  const int half = dim / 2;
  nn::Matrix e(1, dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = 1000.0 * noise_level * freq;
    e(0, i) = std::cos(arg);
    e(0, half + i) = std::sin(arg);
  }
  return e;
}

nn::Matrix embed_tokens(const nn::Matrix& table, const std::vector<std::int32_t>& tokens) {
  nn::Matrix out(static_cast<Eigen::Index>(tokens.size()), table.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    require(tokens[i] >= 0 && tokens[i] < table.rows(), ErrorCode::kShape, "token id outside vocabulary");
    out.row(static_cast<Eigen::Index>(i)) = table.row(tokens[i]);
  }
  return out;
}

}  // namespace avs
