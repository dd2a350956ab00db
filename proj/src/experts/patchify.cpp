// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/experts/patchify.hpp"

#include "avs/core/error.hpp"

namespace avs {

TokenSeq patchify_video(const VideoLatent& v, const std::array<int, 3>& patch) {
  const VideoShape& s = v.shape();
  const auto [pt, ph, pw] = patch;
  require(pt > 0 && ph > 0 && pw > 0, ErrorCode::kDivisibility, "patch extents must be positive");
  require(s.frames % pt == 0 && s.height % ph == 0 && s.width % pw == 0, ErrorCode::kDivisibility,
          "video patch does not tile the grid");
  const int nf = s.frames / pt, nh = s.height / ph, nw = s.width / pw;
  TokenSeq seq;
  seq.layout.kind = TokenLayout::Kind::kVideo;
  seq.layout.video = s;
  seq.layout.video_patch = patch;
  seq.tokens.resize(Eigen::Index{nf} * nh * nw, Eigen::Index{s.channels} * pt * ph * pw);
  for (int f = 0; f < nf; ++f)
    for (int y = 0; y < nh; ++y)
      for (int x = 0; x < nw; ++x) {
        const Eigen::Index row = (Eigen::Index{f} * nh + y) * nw + x;
        Eigen::Index col = 0;
        for (int c = 0; c < s.channels; ++c)
          for (int dt = 0; dt < pt; ++dt)
            for (int dy = 0; dy < ph; ++dy)
              for (int dx = 0; dx < pw; ++dx) seq.tokens(row, col++) = v.at(c, f * pt + dt, y * ph + dy, x * pw + dx);
      }
  return seq;
}

VideoLatent unpatchify_video(const TokenSeq& seq) {
  require(seq.layout.kind == TokenLayout::Kind::kVideo, ErrorCode::kShape, "not a video token sequence");
  const VideoShape& s = seq.layout.video;
  const auto [pt, ph, pw] = seq.layout.video_patch;
  const int nf = s.frames / pt, nh = s.height / ph, nw = s.width / pw;
  require(seq.tokens.rows() == Eigen::Index{nf} * nh * nw &&
              seq.tokens.cols() == Eigen::Index{s.channels} * pt * ph * pw,
          ErrorCode::kShape, "token matrix does not match its layout");
  VideoLatent v(s);
  for (int f = 0; f < nf; ++f)
    for (int y = 0; y < nh; ++y)
      for (int x = 0; x < nw; ++x) {
        const Eigen::Index row = (Eigen::Index{f} * nh + y) * nw + x;
        Eigen::Index col = 0;
        for (int c = 0; c < s.channels; ++c)
          for (int dt = 0; dt < pt; ++dt)
            for (int dy = 0; dy < ph; ++dy)
              for (int dx = 0; dx < pw; ++dx)
                v.at(c, f * pt + dt, y * ph + dy, x * pw + dx) = static_cast<float>(seq.tokens(row, col++));
      }
  return v;
}

TokenSeq patchify_audio(const MelLatent& m, const std::array<int, 2>& patch) {
  const MelShape& s = m.shape();
  const auto [pa, pf] = patch;
  require(pa > 0 && pf > 0, ErrorCode::kDivisibility, "patch extents must be positive");
  require(s.time % pa == 0 && s.freq % pf == 0, ErrorCode::kDivisibility, "audio patch does not tile the grid");
  const int nt = s.time / pa, nfq = s.freq / pf;
  TokenSeq seq;
  seq.layout.kind = TokenLayout::Kind::kAudio;
  seq.layout.audio = s;
  seq.layout.audio_patch = patch;
  seq.tokens.resize(Eigen::Index{nt} * nfq, Eigen::Index{s.channels} * pa * pf);
  for (int t = 0; t < nt; ++t)
    for (int q = 0; q < nfq; ++q) {
      const Eigen::Index row = Eigen::Index{t} * nfq + q;
      Eigen::Index col = 0;
      for (int c = 0; c < s.channels; ++c)
        for (int dt = 0; dt < pa; ++dt)
          for (int dq = 0; dq < pf; ++dq) seq.tokens(row, col++) = m.at(c, t * pa + dt, q * pf + dq);
    }
  return seq;
}

MelLatent unpatchify_audio(const TokenSeq& seq) {
  require(seq.layout.kind == TokenLayout::Kind::kAudio, ErrorCode::kShape, "not an audio token sequence");
  const MelShape& s = seq.layout.audio;
  const auto [pa, pf] = seq.layout.audio_patch;
  const int nt = s.time / pa, nfq = s.freq / pf;
  require(seq.tokens.rows() == Eigen::Index{nt} * nfq && seq.tokens.cols() == Eigen::Index{s.channels} * pa * pf,
          ErrorCode::kShape, "token matrix does not match its layout");
  MelLatent m(s);
  for (int t = 0; t < nt; ++t)
    for (int q = 0; q < nfq; ++q) {
      const Eigen::Index row = Eigen::Index{t} * nfq + q;
      Eigen::Index col = 0;
      for (int c = 0; c < s.channels; ++c)
        for (int dt = 0; dt < pa; ++dt)
          for (int dq = 0; dq < pf; ++dq) m.at(c, t * pa + dt, q * pf + dq) = static_cast<float>(seq.tokens(row, col++));
    }
  return m;
}

std::vector<int> video_token_buckets(const ModelConfig& cfg) {
  const int nf = cfg.video_grid.frames / cfg.video_patch[0];
  const int per_frame = (cfg.video_grid.height / cfg.video_patch[1]) * (cfg.video_grid.width / cfg.video_patch[2]);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(nf) * per_frame);
  for (int f = 0; f < nf; ++f) out.insert(out.end(), static_cast<std::size_t>(per_frame), f);
  return out;
}

std::vector<int> audio_token_buckets(const ModelConfig& cfg) {
  const int nt = cfg.audio_grid.time / cfg.audio_patch[0];
  const int per_step = cfg.audio_grid.freq / cfg.audio_patch[1];
  // Audio latent steps per video patch-frame.
  const std::int64_t span_num = std::int64_t{cfg.video_patch[0]} * cfg.temporal_ratio.num;
  const std::int64_t span_den = cfg.temporal_ratio.den;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(nt) * per_step);
  for (int t = 0; t < nt; ++t) {
    const std::int64_t first_step = std::int64_t{t} * cfg.audio_patch[0];
    const std::int64_t last_step = first_step + cfg.audio_patch[0] - 1;
    const std::int64_t b0 = first_step * span_den / span_num;
    const std::int64_t b1 = last_step * span_den / span_num;
    require(b0 == b1, ErrorCode::kRatio, "audio token straddles two frame buckets");
    out.insert(out.end(), static_cast<std::size_t>(per_step), static_cast<int>(b0));
  }
  return out;
}

}  // namespace avs
