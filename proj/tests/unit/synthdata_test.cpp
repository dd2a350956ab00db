// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <gtest/gtest.h>

#include "avs/core/error.hpp"
#include "avs/core/shard.hpp"
#include "avs/synthdata/synthdata.hpp"

namespace avs {
namespace {

namespace fs = std::filesystem;

const ModelConfig kCfg = default_config().model;

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "avs_synth_test" / name;
  fs::remove_all(dir);
  return dir;
}

TEST(BallWorld, StaysInsideUnitSquare) {
  RandomStream rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    BallWorld b = random_ball(rng, DataConfig{}, 4);
    for (int f = 0; f < 300; ++f) {
      b.step();
      ASSERT_GE(b.x, 0.0);
      ASSERT_LE(b.x, 1.0);
      ASSERT_GE(b.y, 0.0);
      ASSERT_LE(b.y, 1.0);
    }
  }
}

TEST(BallWorld, ReflectsOffWall) {
  BallWorld b;
  b.x = 0.9;
  b.y = 0.5;
  b.vx = 0.25;
  b.step();
  EXPECT_NEAR(b.x, 0.85, 1e-15);  // 1.15 folded back to 2 - 1.15
  EXPECT_LT(b.vx, 0.0);
}

TEST(RandomBall, SpeedAndHeadingRespectConfig) {
  RandomStream rng(2);
  const DataConfig data;
  for (int i = 0; i < 500; ++i) {
    const BallWorld b = random_ball(rng, data, 4);
    const double speed = std::hypot(b.vx, b.vy);
    const bool known = std::abs(speed - 0.25) < 1e-12 || std::abs(speed - 0.4) < 1e-12 || std::abs(speed - 0.55) < 1e-12;
    EXPECT_TRUE(known) << speed;
    EXPECT_GE(std::abs(b.vy) / speed, data.min_vertical - 1e-12);
  }
}

// Reference centroid written directly against the rendering rule.
double oracle_height(const VideoLatent& v, int frame) {
  const auto& s = v.shape();
  double peak = 0.0;
  std::vector<double> sum(static_cast<std::size_t>(s.height * s.width), 0.0);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      for (int c = 0; c < s.channels; ++c) sum[y * s.width + x] += v.at(c, frame, y, x);
      peak = std::max(peak, sum[y * s.width + x]);
    }
  if (peak <= 0.0) return 0.5;
  double w = 0.0, r = 0.0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      if (sum[y * s.width + x] > 0.25 * peak) {
        w += sum[y * s.width + x];
        r += sum[y * s.width + x] * y;
      }
  return 1.0 - (r / w) / (s.height - 1);
}

TEST(Decode, ZeroLatentGivesCentre) {
  const VideoLatent zero(kCfg.video_grid);
  for (double h : decode_heights(zero)) EXPECT_EQ(h, 0.5);
}

TEST(Decode, SymmetricBlobDecodesExactly) {
  // y = 0.5 puts the blob between rows 1 and 2 of a 4-row grid.
  const std::vector<Position> traj(static_cast<std::size_t>(kCfg.video_grid.frames), Position{0.5, 0.5});
  const VideoLatent v = render_video(traj, kCfg.video_grid, 0.6);
  for (double h : decode_heights(v)) EXPECT_DOUBLE_EQ(h, 0.5);
  // On-cell position: row 2 exactly.
  const std::vector<Position> traj2(static_cast<std::size_t>(kCfg.video_grid.frames), Position{1.0 / 3.0, 1.0 / 3.0});
  const VideoLatent v2 = render_video(traj2, kCfg.video_grid, 0.6);
  for (double h : decode_heights(v2)) EXPECT_NEAR(h, 1.0 / 3.0, 1e-15);
}

TEST(Decode, OneHotPitch) {
  MelLatent m(MelShape{2, 5, 8});
  const int hot[] = {0, 7, 3, 3, 5};
  for (int t = 0; t < 5; ++t) m.at(1, t, hot[t]) = 1.0f;
  const auto bins = decode_pitch_bins(m);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(bins[t], hot[t]);
}

TEST(GenPair, BallAtRestGivesConstantPitch) {
  BallWorld b;
  b.x = 0.3;
  b.y = 0.5;
  const SampleTuple s = gen_pair_from(b, 0, kCfg);
  const int expected = static_cast<int>(std::lround(0.5 * (kCfg.audio_grid.freq - 1)));
  for (int bin : decode_pitch_bins(s.audio)) EXPECT_EQ(bin, expected);
}

TEST(GenPair, Deterministic) {
  const SampleTuple a = gen_pair(0, kCfg);
  const SampleTuple b = gen_pair(0, kCfg);
  EXPECT_TRUE(bitwise_equal(a, b));
  EXPECT_FALSE(bitwise_equal(a, gen_pair(1, kCfg)));
}

TEST(GenPair, InvariantsAndTags) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SampleTuple s = gen_pair(seed, kCfg);
    EXPECT_TRUE(satisfies_invariants(s));
    EXPECT_EQ(s.subset, SubsetTag::kTheta);
    EXPECT_EQ(s.video.shape(), kCfg.video_grid);
    EXPECT_EQ(s.audio.shape(), kCfg.audio_grid);
    EXPECT_EQ(s.video_caption.front(), vocab::kTagVideo);
    EXPECT_EQ(s.audio_caption.front(), vocab::kTagAudio);
    EXPECT_EQ(s.speech, TokenSeq32{vocab::kNoSpeech});
  }
}

TEST(GenPair, PitchTracksHeightExactly) {
  const int ratio = static_cast<int>(kCfg.temporal_ratio.num / kCfg.temporal_ratio.den);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SampleTuple s = gen_pair(seed, kCfg);
    const auto bins = decode_pitch_bins(s.audio);
    ASSERT_EQ(static_cast<int>(bins.size()), kCfg.audio_grid.time);
    for (int t = 0; t < kCfg.audio_grid.time; ++t) {
      const double h = oracle_height(s.video, t / ratio);
      ASSERT_EQ(bins[t], static_cast<int>(std::lround(h * (kCfg.audio_grid.freq - 1)))) << seed << " t=" << t;
    }
  }
}

TEST(GenPair, CaptionsEncodeDecodedClasses) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SampleTuple s = gen_pair(seed, kCfg);
    const auto bins = decode_pitch_bins(s.audio);
    const int d = bins.back() - bins.front();
    const std::int32_t pdir = d > 0 ? vocab::kPitchUp : (d < 0 ? vocab::kPitchDown : vocab::kPitchFlat);
    EXPECT_EQ(s.video_caption[3], pdir);
    EXPECT_EQ(s.audio_caption[1], pdir);
    const Position p0 = decode_position(s.video, 0);
    const std::int32_t quad = p0.y >= 0.5 ? (p0.x < 0.5 ? vocab::kQuadUL : vocab::kQuadUR)
                                          : (p0.x < 0.5 ? vocab::kQuadLL : vocab::kQuadLR);
    EXPECT_EQ(s.video_caption[1], quad);
    EXPECT_EQ(s.video_caption[2], s.audio_caption[2]);
  }
}

TEST(GenPair, MotionProducesVaryingHeights) {
  int varying = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto h = decode_heights(gen_pair(seed, kCfg).video);
    if (*std::max_element(h.begin(), h.end()) > *std::min_element(h.begin(), h.end())) ++varying;
  }
  EXPECT_EQ(varying, 50);
}

TEST(Degrade, TinySigmaLeavesVideo) {
  const SampleTuple s = gen_pair(3, kCfg);
  const SampleTuple d = degrade(s, 9, 1e-30);
  EXPECT_EQ(d.video, s.video);
  EXPECT_EQ(d.subset, SubsetTag::kZeta);
}

TEST(Degrade, AudioUntouchedAndReferenceReextracted) {
  const SampleTuple s = gen_pair(4, kCfg);
  for (double sigma : {0.1, 0.5, 3.0}) {
    const SampleTuple d = degrade(s, 5, sigma);
    ASSERT_EQ(d.audio.data().size(), s.audio.data().size());
    EXPECT_EQ(std::memcmp(d.audio.data().data(), s.audio.data().data(), s.audio.data().size_bytes()), 0);
    EXPECT_EQ(d.reference, d.video.frames(0, 1));
    EXPECT_TRUE(satisfies_invariants(d));
  }
  EXPECT_THROW(degrade(s, 5, 0.0), Error);
}

TEST(Degrade, EmpiricalStd) {
  std::vector<double> diffs;
  for (std::uint64_t seed = 0; diffs.size() < 10000; ++seed) {
    const SampleTuple s = gen_pair(seed, kCfg);
    const SampleTuple d = degrade(s, seed + 100, 0.5);
    for (std::size_t i = 0; i < s.video.data().size(); ++i) diffs.push_back(double(d.video.data()[i]) - s.video.data()[i]);
  }
  double mean = 0, sq = 0;
  for (double v : diffs) mean += v;
  mean /= diffs.size();
  for (double v : diffs) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / (diffs.size() - 1));
  EXPECT_NEAR(sd, 0.5, 0.025);
}

std::map<std::string, int> manifest_counts(const fs::path& p) {
  std::ifstream in(p);
  std::map<std::string, int> counts;
  long id;
  std::string tag;
  while (in >> id >> tag) counts[tag]++;
  return counts;
}

TEST(BuildDataset, CleanOnly) {
  const Config cfg = default_config();
  const DatasetInfo info = build_dataset(4, 0, 7, cfg, temp_dir("clean"));
  ASSERT_EQ(info.shards.size(), 1u);
  const auto samples = read_shard(info.shards[0]);
  ASSERT_EQ(samples.size(), 4u);
  for (const auto& s : samples) EXPECT_EQ(s.subset, SubsetTag::kTheta);
  EXPECT_EQ(manifest_counts(info.manifest)["THETA"], 4);
}

TEST(BuildDataset, ManifestCountsBothTags) {
  const Config cfg = default_config();
  const DatasetInfo info = build_dataset(4, 4, 7, cfg, temp_dir("mixed"));
  const auto counts = manifest_counts(info.manifest);
  EXPECT_EQ(counts.at("THETA"), 4);
  EXPECT_EQ(counts.at("ZETA"), 4);
  const auto all = load_dataset(info.manifest.parent_path());
  ASSERT_EQ(all.size(), 8u);
  int zeta = 0;
  for (const auto& s : all) zeta += s.subset == SubsetTag::kZeta;
  EXPECT_EQ(zeta, 4);
}

TEST(BuildDataset, SameSeedSameChecksum) {
  const Config cfg = default_config();
  const DatasetInfo a = build_dataset(5, 3, 11, cfg, temp_dir("rep_a"));
  const DatasetInfo b = build_dataset(5, 3, 11, cfg, temp_dir("rep_b"));
  EXPECT_EQ(stored_checksum(a.shards[0]), stored_checksum(b.shards[0]));
  const DatasetInfo c = build_dataset(5, 3, 12, cfg, temp_dir("rep_c"));
  EXPECT_NE(stored_checksum(a.shards[0]), stored_checksum(c.shards[0]));
}

TEST(BuildDataset, ShardsSplitAtCapacity) {
  Config cfg = default_config();
  const DatasetInfo info = build_dataset(kSamplesPerShard + 3, 0, 1, cfg, temp_dir("split"));
  EXPECT_EQ(info.shards.size(), 2u);
  EXPECT_EQ(read_shard(info.shards[1]).size(), 3u);
}

TEST(BuildDataset, RequiresCleanSamples) {
  EXPECT_THROW(build_dataset(0, 4, 1, default_config(), temp_dir("none")), Error);
}

}  // namespace
}  // namespace avs
