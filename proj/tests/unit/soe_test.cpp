// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include <gtest/gtest.h>

#include "avs/core/error.hpp"
#include "avs/experts/patchify.hpp"
#include "avs/soe/soe.hpp"

namespace avs {
namespace {

using nn::Matrix;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  RandomStream rng(seed);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected avs::Error";
  return ErrorCode::kUsage;
}

BlockWeights constant_block(double value) {
  BlockWeights b;
  b.params["a"] = Matrix::Constant(2, 3, value);
  b.params["b"] = Matrix::Constant(1, 4, value);
  return b;
}

TEST(InsertionPoints, EvenSplit) {
  EXPECT_EQ(insertion_points(4, 6), (std::vector<int>{1, 2}));
  EXPECT_EQ(insertion_points(2, 3), (std::vector<int>{1}));
  EXPECT_EQ(insertion_points(6, 6), (std::vector<int>{}));
  EXPECT_EQ(insertion_points(3, 5), (std::vector<int>{1, 2}));
  // More insertions than gaps: floor values 0,1,1 clamp into [1,1].
  EXPECT_EQ(insertion_points(2, 5), (std::vector<int>{1, 1, 1}));
}

TEST(Interpolate, SameDepthUnchanged) {
  const std::vector<BlockWeights> in{constant_block(1), constant_block(2), constant_block(5)};
  EXPECT_EQ(interpolate_layers(in, 3), in);
}

TEST(Interpolate, IdenticalNeighbours) {
  const std::vector<BlockWeights> in{constant_block(1.5), constant_block(1.5)};
  const auto out = interpolate_layers(in, 3);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[1], in[0]);
}

TEST(Interpolate, OnesAndThreesGiveTwos) {
  const std::vector<BlockWeights> in{constant_block(1), constant_block(3)};
  const auto out = interpolate_layers(in, 3);
  EXPECT_EQ(out[1], constant_block(2));
  EXPECT_EQ(out[0], in[0]);
  EXPECT_EQ(out[2], in[1]);
}

TEST(Interpolate, FourToSixOrder) {
  std::vector<BlockWeights> in;
  for (int i = 0; i < 4; ++i) in.push_back(constant_block(10.0 * i));
  const auto out = interpolate_layers(in, 6);
  ASSERT_EQ(out.size(), 6u);
  const double expected[] = {0, 5, 10, 15, 20, 30};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(out[i].at("a")(0, 0), expected[i]) << i;
}

TEST(Interpolate, RandomTensorsAreMeans) {
  std::vector<BlockWeights> in(3);
  for (int i = 0; i < 3; ++i) {
    in[i].params["w"] = random_matrix(3, 4, 10 + i);
    in[i].params["v"] = random_matrix(1, 2, 20 + i);
  }
  const auto out = interpolate_layers(in, 7);
  ASSERT_EQ(out.size(), 7u);
  // Originals appear in order as a subsequence.
  std::size_t next = 0;
  for (const auto& b : out)
    if (next < in.size() && b == in[next]) ++next;
  EXPECT_EQ(next, in.size());
  // points for len 3, gaps 4: floor(3/5)=0->1, floor(6/5)=1, floor(9/5)=1, floor(12/5)=2
  EXPECT_EQ(insertion_points(3, 7), (std::vector<int>{1, 1, 1, 2}));
  for (int i : {1, 2, 3}) EXPECT_LT((out[i].at("w") - 0.5 * (in[0].at("w") + in[1].at("w"))).norm(), 1e-15);
  EXPECT_LT((out[5].at("v") - 0.5 * (in[1].at("v") + in[2].at("v"))).norm(), 1e-15);
}

TEST(Interpolate, Errors) {
  const std::vector<BlockWeights> in{constant_block(1), constant_block(3)};
  EXPECT_EQ(code_of([&] { interpolate_layers(in, 1); }), ErrorCode::kDepth);
  EXPECT_EQ(code_of([&] { interpolate_layers({constant_block(1)}, 2); }), ErrorCode::kDepth);
  BlockWeights odd = constant_block(3);
  odd.params["extra"] = Matrix::Zero(1, 1);
  EXPECT_EQ(code_of([&] { interpolate_layers({constant_block(1), odd}, 3); }), ErrorCode::kNameMismatch);
  BlockWeights renamed;
  renamed.params["a"] = Matrix::Zero(2, 3);
  renamed.params["c"] = Matrix::Zero(1, 4);
  EXPECT_EQ(code_of([&] { interpolate_layers({constant_block(1), renamed}, 3); }), ErrorCode::kNameMismatch);
}

TEST(BuildFused, DepthsFourAndSix) {
  const ModelConfig cfg = default_config().model;
  const FusedModel m = init_fused_model(cfg, 3);
  EXPECT_EQ(m.depth, 6);
  EXPECT_EQ(std::count(m.video_inserted.begin(), m.video_inserted.end(), true), 2);
  EXPECT_EQ(std::count(m.audio_inserted.begin(), m.audio_inserted.end(), true), 0);
  EXPECT_EQ(m.video_inserted, (std::vector<bool>{false, true, false, true, false, false}));
  const ExpertWeights v = init_expert(StreamKind::kVideo, cfg, 3);
  EXPECT_EQ(m.video_block(0), v.blocks[0]);
  EXPECT_EQ(m.video_block(2), v.blocks[1]);
  EXPECT_EQ(m.video_block(5), v.blocks[3]);
  for (int i = 0; i < m.depth; ++i) {
    const ConnectorWeights c = m.connector(i);
    for (const char* name : {"vself.v", "vcross.v", "across.v"}) EXPECT_EQ(c.params.at(name).norm(), 0.0);
  }
}

TEST(BuildFused, EqualDepthsKeepWeights) {
  ModelConfig cfg = default_config().model;
  cfg.video_depth = cfg.audio_depth = 3;
  const ExpertWeights v = init_expert(StreamKind::kVideo, cfg, 5);
  const ExpertWeights a = init_expert(StreamKind::kAudio, cfg, 5);
  const FusedModel m = build_fused_model(cfg, v, a, init_text_embedding(cfg, 5), 5);
  ASSERT_EQ(m.depth, 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(m.video_block(i), v.blocks[i]);
    EXPECT_EQ(m.audio_block(i), a.blocks[i]);
  }
}

struct Inputs {
  Matrix vp, ap;
  Captions32 caps;
  double s;
};

Inputs random_inputs(const ModelConfig& cfg, std::uint64_t seed) {
  RandomStream rng(seed);
  Inputs in;
  in.vp = random_matrix(cfg.video_token_count(), cfg.video_patch_width(), seed * 3 + 1);
  in.ap = random_matrix(cfg.audio_token_count(), cfg.audio_patch_width(), seed * 3 + 2);
  auto tok = [&] { return static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size))); };
  in.caps = {{tok(), tok(), tok(), tok()}, {tok(), tok(), tok()}, {tok()}};
  in.s = rng.uniform();
  return in;
}

TEST(FusedForward, ReproducesExpertsAtInit) {
  const ModelConfig cfg = default_config().model;
  const FusedModel m = init_fused_model(cfg, 8);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Inputs in = random_inputs(cfg, k);
    nn::Tape tape;
    BoundParams p(tape, m.params, false);
    const FusedOutput fused = fused_forward(p, m, in.vp, in.ap, in.caps, in.s);
    const ExpertOutput v = expert_forward(p, StreamKind::kVideo, cfg, m.depth, in.vp, in.caps, in.s);
    const ExpertOutput a = expert_forward(p, StreamKind::kAudio, cfg, m.depth, in.ap, in.caps, in.s);
    EXPECT_EQ((fused.video_velocity.value() - v.velocity.value()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((fused.audio_velocity.value() - a.velocity.value()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((fused.ssl_tap.value() - a.hidden[cfg.fusion_layer_ssl].value()).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(FusedForward, NonzeroValueProjectionCouplesStreams) {
  const ModelConfig cfg = default_config().model;
  FusedModel m = init_fused_model(cfg, 9);
  RandomStream rng(4);
  for (auto& [name, w] : m.params)
    if (name.starts_with("connector.") && name.ends_with(".v"))
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.2 * rng.normal();
  const Inputs in = random_inputs(cfg, 1);
  nn::Tape tape;
  BoundParams p(tape, m.params, false);
  const FusedOutput fused = fused_forward(p, m, in.vp, in.ap, in.caps, in.s);
  const ExpertOutput v = expert_forward(p, StreamKind::kVideo, cfg, m.depth, in.vp, in.caps, in.s);
  const ExpertOutput a = expert_forward(p, StreamKind::kAudio, cfg, m.depth, in.ap, in.caps, in.s);
  EXPECT_GT((fused.video_velocity.value() - v.velocity.value()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GT((fused.audio_velocity.value() - a.velocity.value()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FrameBucketed, SingleTokenBucketGivesProjectedValue) {
  const Matrix q = random_matrix(6, 4, 1);
  const std::vector<int> frames{0, 0, 1, 1, 2, 2};
  // One audio token per frame bucket (ratio 4).
  const Matrix audio = random_matrix(3, 4, 2);
  const std::vector<int> steps{0, 5, 8};
  const Matrix kp = random_matrix(4, 4, 3), vp = random_matrix(4, 4, 4);
  const Matrix out = frame_bucketed_cross_attention(q, frames, audio, steps, 4, kp, vp);
  for (int i = 0; i < 6; ++i) {
    const nn::RowVector expected = audio.row(frames[i]) * vp;
    EXPECT_LT((out.row(i) - expected).norm(), 1e-12);
  }
  EXPECT_EQ(frame_bucketed_cross_attention(q, frames, audio, steps, 4, kp, Matrix::Zero(4, 4)).norm(), 0.0);
}

TEST(FrameBucketed, PermutationWithinBucketsIsLocal) {
  const Matrix q = random_matrix(6, 4, 5);
  const std::vector<int> frames{0, 0, 1, 1, 2, 2};
  const Matrix audio = random_matrix(6, 4, 6);
  const std::vector<int> steps{0, 2, 4, 6, 8, 10};  // ratio 4: buckets 0,0,1,1,2,2
  const Matrix kp = random_matrix(4, 4, 7), vp = random_matrix(4, 4, 8);
  const Matrix base = frame_bucketed_cross_attention(q, frames, audio, steps, 4, kp, vp);
  // Swap the token in bucket 0 with the one in bucket 2.
  Matrix swapped = audio;
  swapped.row(1) = audio.row(5);
  swapped.row(5) = audio.row(1);
  const Matrix out = frame_bucketed_cross_attention(q, frames, swapped, steps, 4, kp, vp);
  for (int i = 0; i < 6; ++i) {
    const double diff = (out.row(i) - base.row(i)).norm();
    if (frames[i] == 1) {
      EXPECT_EQ(diff, 0.0);
    } else {
      EXPECT_GT(diff, 1e-9);
    }
  }
}

TEST(FrameBucketed, RatioMismatch) {
  const Matrix q = random_matrix(2, 4, 1);
  const std::vector<int> frames{0, 1};
  const Matrix audio = random_matrix(2, 4, 2);
  const std::vector<int> steps{0, 8};  // bucket 2 does not exist
  EXPECT_EQ(code_of([&] {
              frame_bucketed_cross_attention(q, frames, audio, steps, 4, random_matrix(4, 4, 3), random_matrix(4, 4, 4));
            }),
            ErrorCode::kRatio);
}

struct BlockHarness {
  ModelConfig cfg = default_config().model;
  FusedModel m;
  Inputs in;

  explicit BlockHarness(std::uint64_t seed) : m(init_fused_model(cfg, seed)), in(random_inputs(cfg, seed)) {}

  FusedContext context(const BoundParams& p) const {
    FusedContext ctx;
    ctx.cfg = &cfg;
    nn::Tape& tape = p.tape();
    nn::Var emb = tape.constant(timestep_embedding(in.s, cfg.time_embed_dim));
    ctx.video_time = stream_time(emb, ParamView{&p, "video."});
    ctx.audio_time = stream_time(emb, ParamView{&p, "audio."});
    ctx.video_text = video_text(p, in.caps);
    ctx.audio_cond = audio_condition(p, in.caps);
    ctx.video_buckets = video_token_buckets(cfg);
    ctx.audio_buckets = audio_token_buckets(cfg);
    return ctx;
  }
};

TEST(FusedBlock, ZeroAudioHiddenLeavesVideoUntouched) {
  BlockHarness h(11);
  RandomStream rng(12);
  for (auto& [name, w] : h.m.params)
    if (name.starts_with("connector.0.") && name.ends_with(".v"))
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  // Close the audio self-attention gate so the audio hidden stays zero
  // where it is tapped.
  BlockWeights ab = h.m.audio_block(0);
  const Eigen::Index d = h.cfg.audio_dim;
  ab.at("ada.w").middleCols(2 * d, d).setZero();
  ab.at("ada.b").middleCols(2 * d, d).setZero();
  insert_prefixed(h.m.params, "audio.block.0.", ab.params);

  nn::Tape tape;
  BoundParams p(tape, h.m.params, false);
  const FusedContext ctx = h.context(p);
  nn::Var hv = tape.constant(random_matrix(h.cfg.video_token_count(), h.cfg.video_dim, 13));
  nn::Var ha = tape.constant(Matrix::Zero(h.cfg.audio_token_count(), h.cfg.audio_dim));
  const auto [vout, aout] = fused_block_forward(hv, ha, ctx, p, 0);
  const Matrix expert = video_block(hv, ctx.video_text, ctx.video_time, ParamView{&p, "video.block.0."}, h.cfg.video_heads).out.value();
  EXPECT_EQ((vout.value() - expert).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FusedBlock, GradientFlowsVideoToAudio) {
  BlockHarness h(14);
  RandomStream rng(15);
  for (auto& [name, w] : h.m.params)
    if (name.starts_with("connector.0.") && name.ends_with(".v"))
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 * rng.normal();
  const Matrix xv = random_matrix(h.cfg.video_token_count(), h.cfg.video_dim, 16);
  const Matrix xa = random_matrix(h.cfg.audio_token_count(), h.cfg.audio_dim, 17);
  auto audio_sum = [&](const Matrix& video_in) {
    nn::Tape tape;
    BoundParams p(tape, h.m.params, false);
    const FusedContext ctx = h.context(p);
    return fused_block_forward(tape.constant(video_in), tape.constant(xa), ctx, p, 0).second.value().sum();
  };
  auto video_sum = [&](const Matrix& audio_in) {
    nn::Tape tape;
    BoundParams p(tape, h.m.params, false);
    const FusedContext ctx = h.context(p);
    return fused_block_forward(tape.constant(xv), tape.constant(audio_in), ctx, p, 0).first.value().sum();
  };
  const double eps = 1e-5;
  Matrix up = xv, down = xv;
  up(3, 2) += eps;
  down(3, 2) -= eps;
  EXPECT_GT(std::abs((audio_sum(up) - audio_sum(down)) / (2 * eps)), 1e-6);
  Matrix aup = xa, adown = xa;
  aup(5, 1) += eps;
  adown(5, 1) -= eps;
  EXPECT_GT(std::abs((video_sum(aup) - video_sum(adown)) / (2 * eps)), 1e-6);
}

TEST(FusedBlock, VideoToAudioInjectionIsFrameLocal) {
  BlockHarness h(18);
  RandomStream rng(19);
  for (auto& [name, w] : h.m.params)
    if (name.starts_with("connector.0.") && name.ends_with(".v"))
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 * rng.normal();
  const Matrix xa = random_matrix(h.cfg.audio_token_count(), h.cfg.audio_dim, 20);
  const Matrix ctx_v = random_matrix(h.cfg.video_token_count(), h.cfg.audio_dim, 21);
  const std::vector<int> vb = video_token_buckets(h.cfg);
  const std::vector<int> ab = audio_token_buckets(h.cfg);
  auto audio_out = [&](const Matrix& video_ctx) {
    nn::Tape tape;
    BoundParams p(tape, h.m.params, false);
    const FusedContext ctx = h.context(p);
    const ParamView aw{&p, "audio.block.0."};
    const ParamView cw{&p, "connector.0."};
    const AudioInjection inj{tape.constant(video_ctx), cw("across.k"), cw("across.v"), ab, vb};
    const AudioBlockState st = audio_block_self(tape.constant(xa), ctx.audio_time, aw, h.cfg.audio_heads);
    return Matrix(audio_block_finish(st, ctx.audio_cond, aw, h.cfg.audio_heads, &inj).value());
  };
  const Matrix base = audio_out(ctx_v);
  const int frame = 5;
  Matrix moved = ctx_v;
  for (Eigen::Index r = 0; r < moved.rows(); ++r)
    if (vb[static_cast<std::size_t>(r)] == frame) moved.row(r).array() += 1.0;
  const Matrix diff = (audio_out(moved) - base).cwiseAbs();
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    if (ab[static_cast<std::size_t>(r)] == frame)
      EXPECT_GT(diff.row(r).maxCoeff(), 1e-9) << r;
    else
      EXPECT_EQ(diff.row(r).maxCoeff(), 0.0) << r;
  }
}

TEST(FusedModelIo, SaveLoadRoundTrip) {
  const ModelConfig cfg = default_config().model;
  const FusedModel m = init_fused_model(cfg, 21);
  const auto path = std::filesystem::temp_directory_path() / "avs_soe_model.avsh";
  save_model(m, path);
  const FusedModel back = load_model(cfg, path);
  ASSERT_EQ(back.params.size(), m.params.size());
  for (const auto& [name, w] : m.params) EXPECT_EQ(back.params.at(name), w) << name;
}

TEST(InterpolatedBlock, IdentityGatedNeighboursGiveIdentity) {
  const ModelConfig cfg = default_config().model;
  RandomStream rng(3);
  BlockWeights a = init_block(StreamKind::kVideo, cfg, rng), b = init_block(StreamKind::kVideo, cfg, rng);
  zero_gates(a);
  zero_gates(b);
  const auto blocks = interpolate_layers({a, b}, 3);
  ParamMap params;
  insert_prefixed(params, "blk.", blocks[1].params);
  params["text.embed"] = init_text_embedding(cfg, 1);
  nn::Tape tape;
  BoundParams p(tape, params, false);
  const Matrix x = random_matrix(cfg.video_token_count(), cfg.video_dim, 4);
  const Captions32 caps{{1, 4, 8, 11}, {2, 11, 8}, {3}};
  const Matrix out = video_block(tape.constant(x), video_text(p, caps), tape.constant(random_matrix(1, cfg.video_dim, 5)),
                                 ParamView{&p, "blk."}, cfg.video_heads)
                         .out.value();
  EXPECT_EQ(out, x);
}

}  // namespace
}  // namespace avs
