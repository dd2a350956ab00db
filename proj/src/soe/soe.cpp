// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/soe/soe.hpp"

#include <algorithm>
#include <cmath>

#include "avs/core/error.hpp"
#include "avs/core/shard.hpp"
#include "avs/experts/patchify.hpp"

namespace avs {

using nn::Matrix;
using nn::Var;

namespace {

Matrix glorot(RandomStream& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  Matrix m(fan_in, fan_out);
  const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  return m;
}

std::string block_prefix(StreamKind kind, int i) {
  return std::string(stream_prefix(kind)) + ".block." + std::to_string(i) + ".";
}

std::string connector_prefix(int i) { return "connector." + std::to_string(i) + "."; }

std::vector<bool> inserted_flags(int len, int target) {
  std::vector<bool> flags;
  const std::vector<int> points = insertion_points(len, target);
  std::size_t next = 0;
  for (int k = 0; k <= len; ++k) {
    while (next < points.size() && points[next] == k) {
      flags.push_back(true);
      ++next;
    }
    if (k < len) flags.push_back(false);
  }
  return flags;
}

}  // namespace

ConnectorWeights init_connector(const ModelConfig& cfg, RandomStream& rng) {
  const int dv = cfg.video_dim, da = cfg.audio_dim, hid = cfg.adapter_hidden;
  ConnectorWeights c;
  auto& p = c.params;
  p["a2v.w1"] = glorot(rng, da, hid);
  p["a2v.w2"] = glorot(rng, hid, dv);
  p["v2a.w1"] = glorot(rng, dv, hid);
  p["v2a.w2"] = glorot(rng, hid, da);
  p["norm.g"] = Matrix::Ones(1, dv);
  p["norm.b"] = Matrix::Zero(1, dv);
  p["vself.k"] = glorot(rng, dv, dv);
  p["vself.v"] = Matrix::Zero(dv, dv);
  p["vcross.k"] = glorot(rng, dv, dv);
  p["vcross.v"] = Matrix::Zero(dv, dv);
  p["across.k"] = glorot(rng, da, da);
  p["across.v"] = Matrix::Zero(da, da);
  return c;
}

std::vector<int> insertion_points(int len, int target_depth) {
  require(target_depth >= len, ErrorCode::kDepth, "target depth below current depth");
  const int gaps = target_depth - len;
  std::vector<int> points;
  if (gaps == 0) return points;
  require(len >= 2, ErrorCode::kDepth, "interpolation needs at least two blocks");
  for (int i = 0; i < gaps; ++i) {
    const int k = static_cast<int>((std::int64_t{i} + 1) * len / (gaps + 1));
    points.push_back(std::clamp(k, 1, len - 1));
  }
  return points;
}

std::vector<BlockWeights> interpolate_layers(const std::vector<BlockWeights>& blocks, int target_depth) {
  const int len = static_cast<int>(blocks.size());
  const std::vector<int> points = insertion_points(len, target_depth);
  std::vector<BlockWeights> out;
  out.reserve(static_cast<std::size_t>(target_depth));
  std::size_t next = 0;
  for (int k = 0; k < len; ++k) {
    out.push_back(blocks[static_cast<std::size_t>(k)]);
    while (next < points.size() && points[next] == k + 1) {
      const BlockWeights& a = blocks[static_cast<std::size_t>(k)];
      const BlockWeights& b = blocks[static_cast<std::size_t>(k + 1)];
      require(a.params.size() == b.params.size(), ErrorCode::kNameMismatch,
              "bracketing blocks have different parameter sets");
      BlockWeights mid;
      for (const auto& [name, ma] : a.params) {
        const auto it = b.params.find(name);
        require(it != b.params.end(), ErrorCode::kNameMismatch, "parameter '" + name + "' missing in next block");
        require(it->second.rows() == ma.rows() && it->second.cols() == ma.cols(), ErrorCode::kNameMismatch,
                "parameter '" + name + "' has different shapes in bracketing blocks");
        mid.params[name] = 0.5 * (ma + it->second);
      }
      out.push_back(std::move(mid));
      ++next;
    }
  }
  return out;
}

BlockWeights FusedModel::video_block(int i) const {
  return {extract_prefixed(params, block_prefix(StreamKind::kVideo, i))};
}

BlockWeights FusedModel::audio_block(int i) const {
  return {extract_prefixed(params, block_prefix(StreamKind::kAudio, i))};
}

ConnectorWeights FusedModel::connector(int i) const { return {extract_prefixed(params, connector_prefix(i))}; }

FusedModel build_fused_model(const ModelConfig& cfg, const ExpertWeights& video, const ExpertWeights& audio,
                             const Matrix& text_embed, std::uint64_t seed) {
  require(!video.blocks.empty() && !audio.blocks.empty(), ErrorCode::kDepth, "experts need at least one block");
  FusedModel m;
  m.cfg = cfg;
  const int vd = static_cast<int>(video.blocks.size());
  const int ad = static_cast<int>(audio.blocks.size());
  m.depth = std::max(vd, ad);
  m.ssl_tap = cfg.fusion_layer_ssl;
  require(m.ssl_tap >= 0 && m.ssl_tap < m.depth, ErrorCode::kRange, "SSL tap outside fused depth");

  const std::vector<BlockWeights> vblocks = interpolate_layers(video.blocks, m.depth);
  const std::vector<BlockWeights> ablocks = interpolate_layers(audio.blocks, m.depth);
  m.video_inserted = inserted_flags(vd, m.depth);
  m.audio_inserted = inserted_flags(ad, m.depth);

  insert_prefixed(m.params, "video.", video.stream);
  insert_prefixed(m.params, "audio.", audio.stream);
  RandomStream rng(mix_seed(seed, 0xC0));
  for (int i = 0; i < m.depth; ++i) {
    insert_prefixed(m.params, block_prefix(StreamKind::kVideo, i), vblocks[static_cast<std::size_t>(i)].params);
    insert_prefixed(m.params, block_prefix(StreamKind::kAudio, i), ablocks[static_cast<std::size_t>(i)].params);
    insert_prefixed(m.params, connector_prefix(i), init_connector(cfg, rng).params);
  }
  m.params["text.embed"] = text_embed;
  m.params["ssl.mert.w"] = glorot(rng, cfg.audio_dim, cfg.teacher_mert_dim);
  m.params["ssl.mert.b"] = Matrix::Zero(1, cfg.teacher_mert_dim);
  m.params["ssl.hubert.w"] = glorot(rng, cfg.audio_dim, cfg.teacher_hubert_dim);
  m.params["ssl.hubert.b"] = Matrix::Zero(1, cfg.teacher_hubert_dim);
  return m;
}

FusedModel init_fused_model(const ModelConfig& cfg, std::uint64_t seed) {
  return build_fused_model(cfg, init_expert(StreamKind::kVideo, cfg, seed), init_expert(StreamKind::kAudio, cfg, seed),
                           init_text_embedding(cfg, seed), seed);
}

Matrix frame_bucketed_cross_attention(const Matrix& video_queries, std::span<const int> video_frames,
                                      const Matrix& audio_tokens, std::span<const int> audio_steps, int ratio,
                                      const Matrix& k_proj, const Matrix& v_proj, int heads) {
  require(ratio >= 1, ErrorCode::kRatio, "ratio must be positive");
  require(video_frames.size() == static_cast<std::size_t>(video_queries.rows()) &&
              audio_steps.size() == static_cast<std::size_t>(audio_tokens.rows()),
          ErrorCode::kShape, "frame/step index counts must match token counts");
  int frames = 0;
  for (int f : video_frames) frames = std::max(frames, f + 1);
  std::vector<int> buckets(audio_steps.size());
  for (std::size_t j = 0; j < audio_steps.size(); ++j) {
    require(audio_steps[j] >= 0 && audio_steps[j] / ratio < frames, ErrorCode::kRatio,
            "audio token outside every frame bucket");
    buckets[j] = audio_steps[j] / ratio;
  }
  return nn::attention_forward(video_queries, audio_tokens * k_proj, audio_tokens * v_proj, heads, video_frames,
                               buckets);
}

std::pair<Var, Var> fused_block_forward(Var video_tokens, Var audio_tokens, const FusedContext& ctx,
                                        const BoundParams& p, int index) {
  const ModelConfig& cfg = *ctx.cfg;
  const ParamView vw{&p, block_prefix(StreamKind::kVideo, index)};
  const ParamView aw{&p, block_prefix(StreamKind::kAudio, index)};
  const ParamView cw{&p, connector_prefix(index)};

  const AudioBlockState audio_state = audio_block_self(audio_tokens, ctx.audio_time, aw, cfg.audio_heads);
  Var adapted_audio = nn::matmul(nn::matmul(audio_state.after_self, cw("a2v.w1")), cw("a2v.w2"));
  const VideoInjection to_video{affine_layer_norm(adapted_audio, cw("norm.g"), cw("norm.b")),
                                cw("vself.k"),
                                cw("vself.v"),
                                cw("vcross.k"),
                                cw("vcross.v"),
                                cw("norm.g"),
                                cw("norm.b"),
                                ctx.video_buckets,
                                ctx.audio_buckets};
  const VideoBlockOut video = video_block(video_tokens, ctx.video_text, ctx.video_time, vw, cfg.video_heads, &to_video);

  Var adapted_video = nn::matmul(nn::matmul(video.after_self, cw("v2a.w1")), cw("v2a.w2"));
  AudioInjection to_audio{adapted_video, cw("across.k"), cw("across.v")};
  if (cfg.v2a_frame_bucketed) {
    to_audio.audio_buckets = ctx.audio_buckets;
    to_audio.video_buckets = ctx.video_buckets;
  }
  Var audio_out = audio_block_finish(audio_state, ctx.audio_cond, aw, cfg.audio_heads, &to_audio);
  return {video.out, audio_out};
}

FusedOutput fused_forward(const BoundParams& p, const FusedModel& model, const Matrix& video_patches,
                          const Matrix& audio_patches, const Captions32& captions, double noise_level) {
  nn::Tape& tape = p.tape();
  const ModelConfig& cfg = model.cfg;
  const ParamView vs{&p, "video."}, as{&p, "audio."};
  FusedContext ctx;
  ctx.cfg = &cfg;
  Var emb = tape.constant(timestep_embedding(noise_level, cfg.time_embed_dim));
  ctx.video_time = stream_time(emb, vs);
  ctx.audio_time = stream_time(emb, as);
  ctx.video_text = video_text(p, captions);
  ctx.audio_cond = audio_condition(p, captions);
  ctx.video_buckets = video_token_buckets(cfg);
  ctx.audio_buckets = audio_token_buckets(cfg);

  Var hv = stream_input(tape.constant(video_patches), vs);
  Var ha = stream_input(tape.constant(audio_patches), as);
  FusedOutput out;
  for (int i = 0; i < model.depth; ++i) {
    std::tie(hv, ha) = fused_block_forward(hv, ha, ctx, p, i);
    if (i == model.ssl_tap) out.ssl_tap = ha;
  }
  out.video_velocity = stream_output(hv, ctx.video_time, vs);
  out.audio_velocity = stream_output(ha, ctx.audio_time, as);
  return out;
}

void save_model(const FusedModel& model, const std::filesystem::path& path) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(model.params.size());
  for (const auto& [name, m] : model.params) {
    tensors.push_back({name, {m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size())});
  }
  write_tensors(tensors, path);
}

FusedModel load_model(const ModelConfig& cfg, const std::filesystem::path& path) {
  FusedModel m = init_fused_model(cfg, 0);
  const std::vector<NamedTensor> tensors = read_tensors(path);
  require(tensors.size() == m.params.size(), ErrorCode::kNameMismatch, "checkpoint parameter count mismatch");
  for (const NamedTensor& t : tensors) {
    const auto it = m.params.find(t.name);
    require(it != m.params.end(), ErrorCode::kNameMismatch, "unexpected parameter '" + t.name + "' in checkpoint");
    require(t.shape.size() == 2 && t.shape[0] == it->second.rows() && t.shape[1] == it->second.cols(),
            ErrorCode::kShape, "checkpoint shape mismatch for '" + t.name + "'");
    std::copy(t.data.begin(), t.data.end(), it->second.data());
  }
  return m;
}

}  // namespace avs
