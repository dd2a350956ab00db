// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "avs/core/error.hpp"
#include "avs/experts/patchify.hpp"
#include "avs/synthdata/synthdata.hpp"
#include "avs/train/train.hpp"

namespace avs {
namespace {

using nn::Matrix;

Config tiny_config() {
  Config cfg = default_config();
  ModelConfig& m = cfg.model;
  m.video_depth = 2;
  m.audio_depth = 2;
  m.video_dim = 16;
  m.audio_dim = 16;
  m.text_dim = 8;
  m.video_heads = 2;
  m.audio_heads = 2;
  m.ffn_hidden = 32;
  m.adapter_hidden = 8;
  m.time_embed_dim = 8;
  m.fusion_layer_ssl = 1;
  cfg.train.batch = 2;
  return cfg;
}

std::vector<SampleTuple> clean_data(const Config& cfg, int n, std::uint64_t seed = 0) {
  std::vector<SampleTuple> out;
  for (int i = 0; i < n; ++i) out.push_back(gen_pair(mix_seed(seed, i), cfg.model, cfg.data));
  return out;
}

std::vector<SampleTuple> zeta_data(const Config& cfg, int n) {
  std::vector<SampleTuple> out;
  for (const SampleTuple& s : clean_data(cfg, n, 5)) out.push_back(degrade(s, 1, 0.5));
  return out;
}

double max_delta(const ParamMap& a, const ParamMap& b, bool (*pick)(const std::string&)) {
  double m = 0.0;
  for (const auto& [name, p] : a) {
    if (pick(name)) m = std::max(m, (p - b.at(name)).cwiseAbs().maxCoeff());
  }
  return m;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("avs_train_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

TEST(TrainState, RejectsEqualNoiseSeeds) {
  Config cfg = tiny_config();
  cfg.model.seed_audio_noise = cfg.model.seed_video_noise;
  try {
    init_train_state(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSameSeed);
  }
}

TEST(PrepareSample, ReferenceFrameAndPath) {
  const Config cfg = tiny_config();
  const TrainState st = init_train_state(cfg);
  const SampleTuple s = clean_data(cfg, 1)[0];
  const PreparedSample p = prepare_sample(st, s, 3, 1);
  const Matrix mask = first_frame_mask(cfg.model);
  const Matrix x1 = patchify_video(s.video, cfg.model.video_patch).tokens;
  const Matrix x0 = patchify_video(p.noise.eps_video, cfg.model.video_patch).tokens;
  const double t = 1.0 - p.noise_level;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const double expect = mask.data()[i] == 1.0 ? x1.data()[i] : (1 - t) * x0.data()[i] + t * x1.data()[i];
    ASSERT_NEAR(p.video_xt.data()[i], expect, 1e-12);
  }
  EXPECT_LT((p.video_target - (x1 - x0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(p.noise.provenance, NoiseProvenance::kIndependent);
  EXPECT_NE(p.noise.seed_video, p.noise.seed_audio);
  // Different sample index, different noise and level.
  EXPECT_NE(prepare_sample(st, s, 3, 2).noise_level, p.noise_level);
}

TEST(SampleLosses, OracleModelLeavesOnlySsl) {
  const Config cfg = tiny_config();
  const TrainState st = init_train_state(cfg);
  const PreparedSample p = prepare_sample(st, clean_data(cfg, 1)[0], 0, 0);
  nn::Tape tape;
  BoundParams params(tape, st.model.params, false);
  const std::size_t na = static_cast<std::size_t>(cfg.model.audio_token_count());
  nn::Var tap = tape.constant(Matrix::Constant(static_cast<Eigen::Index>(na), cfg.model.audio_dim, 0.3));
  const SslHeads heads{params("ssl.mert.w"), params("ssl.mert.b"), params("ssl.hubert.w"), params("ssl.hubert.b")};
  const SampleLossVars l =
      sample_losses(st, p, tape.constant(p.video_target), tape.constant(p.audio_target), tap, heads);
  EXPECT_EQ(l.video.value()(0, 0), 0.0);
  EXPECT_EQ(l.mel.value()(0, 0), 0.0);
  EXPECT_NE(l.ssl.value()(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(l.total.value()(0, 0), l.ssl.value()(0, 0));
}

TEST(TrainStep, OptimizerFiresEveryGradAccumSteps) {
  const Config cfg = tiny_config();
  TrainState st = init_train_state(cfg);
  const auto data = clean_data(cfg, 8);
  const BatchSource src = dataset_source(data, 1, cfg.train.batch);
  ParamMap before = st.model.params;
  for (int k = 1; k <= 8; ++k) {
    const StepMetrics m = train_step(st, src(st.step));
    const double d = max_delta(st.model.params, before, [](const std::string&) { return true; });
    if (k % 4 == 0) {
      EXPECT_TRUE(m.updated);
      EXPECT_GT(d, 0.0);
      before = st.model.params;
    } else {
      EXPECT_FALSE(m.updated);
      EXPECT_EQ(d, 0.0) << "step " << k;
    }
    EXPECT_LT(st.accum, cfg.train.grad_accum);
  }
}

TEST(TrainStep, IdenticalSeedsGiveIdenticalLosses) {
  const Config cfg = tiny_config();
  const auto data = clean_data(cfg, 8);
  std::vector<double> runs[2];
  for (auto& r : runs) {
    TrainState st = init_train_state(cfg);
    for (const StepMetrics& m : train_loop(st, dataset_source(data, 1, cfg.train.batch), 6)) {
      r.push_back(m.loss.video);
      r.push_back(m.loss.mel);
      r.push_back(*m.loss.ssl);
    }
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(TrainStep, ZetaBelowThresholdFreezesVideoBranch) {
  Config cfg = tiny_config();
  cfg.train.grad_accum = 1;
  for (double s : {0.7, 0.9}) {
    TrainOptions opt;
    opt.fixed_noise_level = s;
    TrainState st = init_train_state(cfg, opt);
    const ParamMap before = st.model.params;
    const auto batch = zeta_data(cfg, 2);
    EXPECT_TRUE(train_step(st, batch).updated);
    const double dv = max_delta(st.model.params, before, is_video_branch);
    const double da = max_delta(st.model.params, before, is_audio_branch);
    if (s < cfg.model.tau_mask) {
      EXPECT_EQ(dv, 0.0);
    } else {
      EXPECT_GT(dv, 0.0);
    }
    EXPECT_GT(da, 0.0);
  }
}

TEST(TrainStep, MaskDisabledUpdatesVideoAtLowNoise) {
  Config cfg = tiny_config();
  cfg.train.grad_accum = 1;
  TrainOptions opt;
  opt.fixed_noise_level = 0.7;
  opt.mask_low_quality = false;
  TrainState st = init_train_state(cfg, opt);
  const ParamMap before = st.model.params;
  train_step(st, zeta_data(cfg, 2));
  EXPECT_GT(max_delta(st.model.params, before, is_video_branch), 0.0);
}

TEST(TrainStep, NonFiniteLossAbortsWithoutSideEffects) {
  const Config cfg = tiny_config();
  TrainState st = init_train_state(cfg);
  st.model.params.at("audio.out.b")(0, 0) = NAN;
  const ParamMap before = st.model.params;
  try {
    train_step(st, clean_data(cfg, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("l_mel"), std::string::npos);
  }
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(st.accum, 0);
  for (const auto& [name, g] : st.grad_sum) EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0) << name;
}

TEST(TrainLoop, ZeroStepsCheckpointIsInitialisation) {
  const Config cfg = tiny_config();
  const auto dir = temp_dir("zero");
  TrainState st = init_train_state(cfg);
  LoopOptions o;
  o.out_dir = dir;
  EXPECT_TRUE(train_loop(st, dataset_source(clean_data(cfg, 2), 1, 2), 0, o).empty());
  const TrainState back = load_train_state(cfg, dir / "state-000000.avsh");
  EXPECT_EQ(back.model.params, init_train_state(cfg).model.params);
  EXPECT_EQ(load_model(cfg.model, dir / "model.avsh").params, back.model.params);
  std::filesystem::remove_all(dir);
}

TEST(TrainLoop, ResumeMatchesUninterruptedRun) {
  const Config cfg = tiny_config();
  const auto data = clean_data(cfg, 8);
  const BatchSource src = dataset_source(data, 2, cfg.train.batch);
  TrainState full = init_train_state(cfg);
  const auto ref = train_loop(full, src, 7);

  const auto dir = temp_dir("resume");
  TrainState first = init_train_state(cfg);
  LoopOptions o;
  o.out_dir = dir;
  train_loop(first, src, 3, o);
  TrainState resumed = load_train_state(cfg, dir / "state-000003.avsh");
  EXPECT_EQ(resumed.accum, 3);
  const auto rest = train_loop(resumed, src, 4);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(rest[k].loss.mel, ref[3 + k].loss.mel);
    EXPECT_EQ(*rest[k].loss.ssl, *ref[3 + k].loss.ssl);
  }
  EXPECT_EQ(resumed.model.params, full.model.params);
  std::filesystem::remove_all(dir);
}

TEST(TrainLoop, MetricsLogFormat) {
  Config cfg = tiny_config();
  const auto data = clean_data(cfg, 4);
  const auto dir = temp_dir("log");
  TrainState st = init_train_state(cfg);
  LoopOptions o;
  o.out_dir = dir;
  train_loop(st, dataset_source(data, 1, 2), 2, o);
  std::ifstream in(dir / "metrics.log");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_EQ(line.rfind("step=" + std::to_string(n) + " l_video=", 0), 0u);
    EXPECT_NE(line.find(" l_ssl="), std::string::npos);
  }
  EXPECT_EQ(n, 2);
  std::filesystem::remove_all(dir);

  cfg.model.lambda_ssl = 0.0;
  TrainState no_ssl = init_train_state(cfg);
  std::ostringstream log;
  LoopOptions o2;
  o2.log = &log;
  const auto h = train_loop(no_ssl, dataset_source(data, 1, 2), 2, o2);
  EXPECT_EQ(log.str().find("l_ssl"), std::string::npos);
  for (const auto& m : h) {
    EXPECT_FALSE(m.loss.ssl.has_value());
    EXPECT_TRUE(std::isfinite(m.loss.fm()));
  }
}

TEST(DatasetSource, EpochsArePermutations) {
  const Config cfg = tiny_config();
  auto data = clean_data(cfg, 6);
  for (int i = 0; i < 6; ++i) data[i].clip_id = i;
  const BatchSource src = dataset_source(data, 4, 3);
  std::vector<std::int64_t> ids;
  for (int step = 0; step < 4; ++step) {
    for (const auto& s : src(step)) ids.push_back(s.clip_id);
  }
  for (int e = 0; e < 2; ++e) {
    std::vector<std::int64_t> epoch(ids.begin() + 6 * e, ids.begin() + 6 * (e + 1));
    std::sort(epoch.begin(), epoch.end());
    EXPECT_EQ(epoch, (std::vector<std::int64_t>{0, 1, 2, 3, 4, 5}));
  }
  EXPECT_EQ(src(2)[1].clip_id, dataset_source(data, 4, 3)(2)[1].clip_id);
}

}  // namespace
}  // namespace avs
