// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "avs/core/error.hpp"
#include "avs/core/rng.hpp"
#include "avs/evalx/evalx.hpp"
#include "avs/synthdata/synthdata.hpp"

namespace avs {
namespace {

namespace fs = std::filesystem;

VideoLatent reverse_frames(const VideoLatent& v) {
  VideoLatent out = v;
  const int n = v.shape().frames;
  for (int f = 0; f < n; ++f) out.set_frames(f, v.frames(n - 1 - f, 1));
  return out;
}

MelLatent reverse_time(const MelLatent& a) {
  MelLatent out = a;
  const MelShape& s = a.shape();
  for (int c = 0; c < s.channels; ++c)
    for (int t = 0; t < s.time; ++t)
      for (int f = 0; f < s.freq; ++f) out.at(c, t, f) = a.at(c, s.time - 1 - t, f);
  return out;
}

TEST(Pearson, KnownValues) {
  EXPECT_DOUBLE_EQ(pearson({1, 2, 3}, {2, 4, 6}), 1.0);
  EXPECT_DOUBLE_EQ(pearson({1, 2, 3}, {3, 2, 1}), -1.0);
  EXPECT_NEAR(pearson({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8, 1e-12);
}

TEST(AvAlignment, CleanPairIsExactlyOne) {
  const ModelConfig cfg;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const SampleTuple s = gen_pair(seed, cfg);
    const Alignment a = av_alignment(s.video, s.audio);
    ASSERT_FALSE(a.degenerate) << seed;
    EXPECT_DOUBLE_EQ(a.value, 1.0) << seed;
  }
}

TEST(AvAlignment, ConstantHeightIsDegenerate) {
  const ModelConfig cfg;
  BallWorld ball;
  ball.x = 0.3;
  ball.y = 0.6;
  const SampleTuple s = gen_pair_from(ball, 0, cfg);
  const Alignment a = av_alignment(s.video, s.audio);
  EXPECT_TRUE(a.degenerate);
  EXPECT_EQ(a.value, 0.0);
}

TEST(AvAlignment, SymmetricUnderJointReversal) {
  const ModelConfig cfg;
  const SampleTuple s = gen_pair(3, cfg);
  const SampleTuple o = gen_pair(11, cfg);
  const Alignment mixed = av_alignment(s.video, o.audio);
  const Alignment rev = av_alignment(reverse_frames(s.video), reverse_time(o.audio));
  EXPECT_NEAR(mixed.value, rev.value, 1e-12);
}

TEST(AvAlignment, RatioErrorOnMismatchedLength) {
  const ModelConfig cfg;
  const SampleTuple s = gen_pair(0, cfg);
  const MelLatent bad(MelShape{4, 63, 8});
  try {
    av_alignment(s.video, bad);
    FAIL() << "expected RATIO";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRatio);
  }
}

TEST(AlignmentPermutation, MatchedPairsBeatShuffledNull) {
  const ModelConfig cfg;
  std::vector<VideoLatent> videos;
  std::vector<MelLatent> audios;
  for (int i = 0; i < 30; ++i) {
    SampleTuple s = gen_pair(mix_seed(5, i), cfg);
    videos.push_back(s.video);
    audios.push_back(s.audio);
  }
  const PermutationResult r = alignment_permutation_test(videos, audios, 200, 9);
  EXPECT_DOUBLE_EQ(r.observed, 1.0);
  EXPECT_LT(r.null_mean_abs, 0.45);
  EXPECT_LT(r.p_value, 0.01);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0 / 201.0);
}

TEST(AlignmentPermutation, ShuffledInputHasNoSignal) {
  const ModelConfig cfg;
  std::vector<VideoLatent> videos;
  std::vector<MelLatent> audios;
  for (int i = 0; i < 30; ++i) {
    videos.push_back(gen_pair(mix_seed(6, i), cfg).video);
    audios.push_back(gen_pair(mix_seed(7, i), cfg).audio);
  }
  const PermutationResult r = alignment_permutation_test(videos, audios, 200, 9);
  EXPECT_GT(r.p_value, 0.01);
  EXPECT_LT(std::abs(r.observed - r.null_mean), 0.2);
}

TEST(EvalReport, JsonRoundTrip) {
  EvalReport r;
  r.av_alignment = 0.625;
  r.av_alignment_signed = -0.125;
  r.degenerate_clips = 2;
  r.clips = 7;
  r.fm_val_loss = 0.3;
  r.noise_max_abs_corr = 0.04;
  r.noise_shape_robust = true;
  r.caption_adherence = 0.5;
  r.per_clip = {0.1, -0.2, 1.0};
  EXPECT_EQ(report_from_json(report_to_json(r)), r);
}

TEST(EvalReport, CorruptJsonRejected) {
  for (const char* bad : {"", "{", "[1,2]", "{\"av_alignment\": \"x\"}"}) {
    try {
      report_from_json(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kCorrupt) << bad;
    }
  }
}

TEST(CaptionAdherence, GroundTruthClipsAdhere) {
  const ModelConfig cfg;
  std::vector<GeneratedClip> clips;
  for (int i = 0; i < 10; ++i) {
    SampleTuple s = gen_pair(mix_seed(8, i), cfg);
    clips.push_back({s, s.video, s.audio});
  }
  EXPECT_DOUBLE_EQ(caption_adherence(clips, DataConfig{}), 1.0);
}

TEST(NoiseCheck, IndependentVersusShared) {
  const NoiseCheck ind = check_noise(false, 1);
  const NoiseCheck shared = check_noise(true, 1);
  EXPECT_TRUE(ind.shape_robust);
  EXPECT_FALSE(shared.shape_robust);
  EXPECT_LT(ind.max_abs_corr, 4.0 / 64.0);
}

TEST(Ablation, ParseNames) {
  EXPECT_EQ(parse_ablation("NO_INSS"), AblationName::kNoInss);
  EXPECT_EQ(parse_ablation("OFFLINE_ANNOT"), AblationName::kOfflineAnnot);
  EXPECT_EQ(to_string(AblationName::kNoLqls), "NO_LQLS");
  try {
    parse_ablation("NO_SUCH");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUsage);
  }
}

TEST(Svg, WellFormedCharts) {
  const std::string line = svg_line_chart({{1, 2, 3}, {3, NAN, 1}}, {"a", "b"}, "t");
  EXPECT_EQ(line.rfind("<svg", 0), 0u);
  EXPECT_NE(line.find("</svg>"), std::string::npos);
  EXPECT_NE(line.find("polyline"), std::string::npos);
  const std::string hist = svg_histogram({0.1, 0.2, 0.9}, 0.0, 1.0, 5, "h");
  EXPECT_NE(hist.find("<rect"), std::string::npos);
  EXPECT_NE(hist.find("</svg>"), std::string::npos);
}

// run_cli with captured stdout.
struct CliRun {
  int code;
  std::string out;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "avstitch");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::string out = testing::internal::GetCapturedStdout();
  out += testing::internal::GetCapturedStderr();
  return {code, out};
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const CliRun r = cli({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("USAGE"), std::string::npos);
  EXPECT_EQ(cli({}).code, 2);
}

TEST(Cli, DomainErrorExitsOne) {
  const CliRun r = cli({"ablate", "--name", "NOPE"});
  EXPECT_EQ(r.code, 2);
  const CliRun m = cli({"eval", "--model", "/nonexistent/model.avsh"});
  EXPECT_EQ(m.code, 1);
  EXPECT_NE(m.out.find("error:"), std::string::npos);
}

TEST(Cli, NoiseDemoIsDeterministic) {
  const CliRun a = cli({"noise-demo", "--seed", "4"});
  const CliRun b = cli({"noise-demo", "--seed", "4"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("shared"), std::string::npos);
}

TEST(Cli, GenTrainEvalSmoke) {
  const fs::path dir = fs::temp_directory_path() / ("avs_cli_smoke_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const fs::path cfg_path = dir / "tiny.json";
  fs::create_directories(dir);
  {
    Config cfg = default_config();
    cfg.model.video_depth = 2;
    cfg.model.audio_depth = 2;
    cfg.model.video_dim = 16;
    cfg.model.audio_dim = 16;
    cfg.model.text_dim = 8;
    cfg.model.video_heads = 2;
    cfg.model.audio_heads = 2;
    cfg.model.ffn_hidden = 32;
    cfg.model.adapter_hidden = 8;
    cfg.model.time_embed_dim = 8;
    cfg.model.fusion_layer_ssl = 1;
    cfg.train.batch = 2;
    cfg.sampler.steps = 2;
    save_config(cfg, cfg_path);
  }
  const std::string c = cfg_path.string();
  ASSERT_EQ(cli({"gen-data", "--config", c, "--out", (dir / "data").string(), "--clean", "4", "--degraded", "2"}).code,
            0);
  const CliRun t = cli({"train", "--config", c, "--data", (dir / "data").string(), "--out", (dir / "run").string(),
                        "--steps", "4", "--plot"});
  ASSERT_EQ(t.code, 0) << t.out;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.avsh"));
  EXPECT_TRUE(fs::exists(dir / "run" / "loss_curve.svg"));
  const CliRun e = cli({"eval", "--config", c, "--model", (dir / "run" / "model.avsh").string(), "--out",
                        (dir / "report.json").string(), "--clips", "2", "--plot", (dir / "plots").string()});
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("av_alignment"), std::string::npos);
  std::ifstream in(dir / "report.json");
  std::stringstream ss;
  ss << in.rdbuf();
  const EvalReport r = report_from_json(ss.str());
  EXPECT_EQ(r.clips, 2);
  EXPECT_TRUE(std::isfinite(r.fm_val_loss));
  EXPECT_TRUE(fs::exists(dir / "plots" / "alignment_hist.svg"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace avs
