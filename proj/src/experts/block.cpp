// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/experts/block.hpp"

#include "avs/core/error.hpp"

namespace avs {

using nn::Matrix;
using nn::Var;

BoundParams::BoundParams(nn::Tape& tape, const ParamMap& params, bool trainable) : tape_(&tape) {
  for (const auto& [name, m] : params) {
    vars_.emplace(name, trainable ? tape.parameter_ref(m) : tape.constant_ref(m));
  }
}

Var BoundParams::operator()(const std::string& name) const {
  const auto it = vars_.find(name);
  require(it != vars_.end(), ErrorCode::kNameMismatch, "missing parameter '" + name + "'");
  return it->second;
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  return nn::attention_forward(q, k, v, heads);
}

Matrix linear_attention(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
  require(q.cols() == k.cols(), ErrorCode::kShape, "linear attention: query/key widths differ");
  return nn::kernel_attention_forward(nn::elu_plus_one(q), nn::elu_plus_one(k), v, heads);
}

Var affine_layer_norm(Var x, Var g, Var b) { return nn::add_row(nn::mul_row(nn::layer_norm(x), g), b); }

Var stream_time(Var embedding, const ParamView& s) {
  Var h = nn::silu(nn::linear(embedding, s("time.w1"), s("time.b1")));
  return nn::silu(nn::linear(h, s("time.w2"), s("time.b2")));
}

Var stream_input(Var patches, const ParamView& s) {
  Var h = nn::linear(patches, s("in.w"), s("in.b"));
  require(h.rows() == s("pos").rows(), ErrorCode::kShape, "token count does not match positional table");
  return nn::add(h, s("pos"));
}

Var stream_output(Var hidden, Var time_cond, const ParamView& s) {
  Var mod = nn::linear(time_cond, s("final.ada.w"), s("final.ada.b"));
  const Eigen::Index d = hidden.cols();
  Var y = nn::modulate(nn::layer_norm(hidden), nn::slice_cols(mod, 0, d), nn::slice_cols(mod, d, d));
  return nn::linear(y, s("out.w"), s("out.b"));
}

namespace {

struct Mod {
  Var shift, scale, gate;
};

Mod chunk(Var mod, int sublayer, Eigen::Index d) {
  const Eigen::Index base = Eigen::Index{sublayer} * 3 * d;
  return {nn::slice_cols(mod, base, d), nn::slice_cols(mod, base + d, d), nn::slice_cols(mod, base + 2 * d, d)};
}

Var ffn(Var x, const ParamView& w) {
  Var h = nn::gelu(nn::linear(x, w("ffn.w1"), w("ffn.b1")));
  return nn::linear(h, w("ffn.w2"), w("ffn.b2"));
}

Var ffn_sublayer(Var h, Var mod, const ParamView& w) {
  const Mod m = chunk(mod, 2, h.cols());
  Var y = nn::modulate(nn::layer_norm(h), m.shift, m.scale);
  return nn::add(h, nn::mul_row(ffn(y, w), m.gate));
}

Var modulation(Var time_cond, const ParamView& w) { return nn::linear(time_cond, w("ada.w"), w("ada.b")); }

}  // namespace

VideoBlockOut video_block(Var tokens, Var text, Var time_cond, const ParamView& w, int heads,
                          const VideoInjection* audio_ctx) {
  const Eigen::Index d = tokens.cols();
  Var mod = modulation(time_cond, w);
  require(mod.cols() == kAdaChunks * d, ErrorCode::kShape, "video block width mismatch");

  // Self-attention.
  const Mod m1 = chunk(mod, 0, d);
  Var y = nn::modulate(nn::layer_norm(tokens), m1.shift, m1.scale);
  Var att = nn::attention(nn::linear(y, w("attn.q.w"), w("attn.q.b")), nn::linear(y, w("attn.k.w"), w("attn.k.b")),
                          nn::linear(y, w("attn.v.w"), w("attn.v.b")), heads);
  if (audio_ctx != nullptr) {
    Var qn = affine_layer_norm(tokens, audio_ctx->norm_g, audio_ctx->norm_b);
    Var q = nn::linear(qn, w("attn.q.w"), w("attn.q.b"));
    Var inj = nn::attention(q, nn::matmul(audio_ctx->audio, audio_ctx->self_k),
                            nn::matmul(audio_ctx->audio, audio_ctx->self_v), heads, audio_ctx->video_buckets,
                            audio_ctx->audio_buckets);
    att = nn::add(att, inj);
  }
  Var h1 = nn::add(tokens, nn::mul_row(nn::linear(att, w("attn.o.w"), w("attn.o.b")), m1.gate));

  // Cross-attention to the caption.
  const Mod m2 = chunk(mod, 1, d);
  Var y2 = nn::modulate(nn::layer_norm(h1), m2.shift, m2.scale);
  Var q2 = nn::linear(y2, w("cross.q.w"), w("cross.q.b"));
  Var catt = nn::attention(q2, nn::linear(text, w("cross.k.w"), w("cross.k.b")),
                           nn::linear(text, w("cross.v.w"), w("cross.v.b")), heads);
  if (audio_ctx != nullptr) {
    Var qn = affine_layer_norm(h1, audio_ctx->norm_g, audio_ctx->norm_b);
    Var q = nn::linear(qn, w("cross.q.w"), w("cross.q.b"));
    Var inj = nn::attention(q, nn::matmul(audio_ctx->audio, audio_ctx->cross_k),
                            nn::matmul(audio_ctx->audio, audio_ctx->cross_v), heads);
    catt = nn::add(catt, inj);
  }
  Var h2 = nn::add(h1, nn::mul_row(nn::linear(catt, w("cross.o.w"), w("cross.o.b")), m2.gate));

  return {ffn_sublayer(h2, mod, w), h1};
}

AudioBlockState audio_block_self(Var tokens, Var time_cond, const ParamView& w, int heads) {
  const Eigen::Index d = tokens.cols();
  Var mod = modulation(time_cond, w);
  require(mod.cols() == kAdaChunks * d, ErrorCode::kShape, "audio block width mismatch");
  const Mod m1 = chunk(mod, 0, d);
  Var y = nn::modulate(nn::layer_norm(tokens), m1.shift, m1.scale);
  Var fq = nn::elu_plus_one(nn::linear(y, w("attn.q.w"), w("attn.q.b")));
  Var fk = nn::elu_plus_one(nn::linear(y, w("attn.k.w"), w("attn.k.b")));
  Var att = nn::kernel_attention(fq, fk, nn::linear(y, w("attn.v.w"), w("attn.v.b")), heads);
  Var h1 = nn::add(tokens, nn::mul_row(nn::linear(att, w("attn.o.w"), w("attn.o.b")), m1.gate));
  return {mod, h1};
}

Var audio_block_finish(const AudioBlockState& state, Var cond, const ParamView& w, int heads,
                       const AudioInjection* video_ctx) {
  Var h1 = state.after_self;
  const Mod m2 = chunk(state.mod, 1, h1.cols());
  Var y2 = nn::modulate(nn::layer_norm(h1), m2.shift, m2.scale);
  Var q = nn::linear(y2, w("cross.q.w"), w("cross.q.b"));
  Var catt = nn::attention(q, nn::linear(cond, w("cross.k.w"), w("cross.k.b")),
                           nn::linear(cond, w("cross.v.w"), w("cross.v.b")), heads);
  if (video_ctx != nullptr) {
    Var inj = nn::attention(q, nn::matmul(video_ctx->video, video_ctx->k), nn::matmul(video_ctx->video, video_ctx->v),
                            heads, video_ctx->audio_buckets, video_ctx->video_buckets);
    catt = nn::add(catt, inj);
  }
  Var h2 = nn::add(h1, nn::mul_row(nn::linear(catt, w("cross.o.w"), w("cross.o.b")), m2.gate));
  return ffn_sublayer(h2, state.mod, w);
}

Var audio_block(Var tokens, Var cond, Var time_cond, const ParamView& w, int heads,
                const AudioInjection* video_ctx) {
  return audio_block_finish(audio_block_self(tokens, time_cond, w, heads), cond, w, heads, video_ctx);
}

Var video_text(const BoundParams& p, const Captions32& captions) {
  return nn::gather_rows(p("text.embed"), captions.video);
}

Var audio_condition(const BoundParams& p, const Captions32& captions) {
  std::vector<int> all;
  all.reserve(captions.video.size() + captions.audio.size() + captions.speech.size());
  all.insert(all.end(), captions.video.begin(), captions.video.end());
  all.insert(all.end(), captions.audio.begin(), captions.audio.end());
  all.insert(all.end(), captions.speech.begin(), captions.speech.end());
  return nn::gather_rows(p("text.embed"), all);
}

ExpertOutput expert_forward(const BoundParams& p, StreamKind kind, const ModelConfig& cfg, int depth,
                            const Matrix& patches, const Captions32& captions, double noise_level) {
  nn::Tape& tape = p.tape();
  const std::string root(stream_prefix(kind));
  const ParamView stream{&p, root + "."};
  const int heads = stream_heads(kind, cfg);
  Var time_cond = stream_time(tape.constant(timestep_embedding(noise_level, cfg.time_embed_dim)), stream);
  Var context = kind == StreamKind::kVideo ? video_text(p, captions) : audio_condition(p, captions);
  Var h = stream_input(tape.constant(patches), stream);
  ExpertOutput out;
  for (int i = 0; i < depth; ++i) {
    const ParamView block{&p, root + ".block." + std::to_string(i) + "."};
    h = kind == StreamKind::kVideo ? video_block(h, context, time_cond, block, heads).out
                                   : audio_block(h, context, time_cond, block, heads);
    out.hidden.push_back(h);
  }
  out.velocity = stream_output(h, time_cond, stream);
  return out;
}

}  // namespace avs
