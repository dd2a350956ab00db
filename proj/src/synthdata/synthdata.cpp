// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/synthdata/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "avs/core/error.hpp"
#include "avs/core/shard.hpp"

namespace avs {
namespace {

double reflect(double p, double& v) {
  if (p < 0.0) {
    p = -p;
    v = -v;
  } else if (p > 1.0) {
    p = 2.0 - p;
    v = -v;
  }
  return std::clamp(p, 0.0, 1.0);
}

constexpr double kPeakFraction = 0.25;

}  // namespace

void BallWorld::step() {
  x = reflect(x + vx, vx);
  y = reflect(y + vy, vy);
}

std::vector<Position> ball_trajectory(BallWorld ball, int frames) {
  std::vector<Position> out;
  out.reserve(static_cast<std::size_t>(std::max(frames, 0)));
  for (int f = 0; f < frames; ++f) {
    out.push_back({ball.x, ball.y});
    ball.step();
  }
  return out;
}

BallWorld random_ball(RandomStream& rng, const DataConfig& data, int grid_height) {
  BallWorld b;
  b.x = rng.uniform();
  b.y = rng.uniform();
  const double speed = data.speeds[rng.below(data.speeds.size())];
  double heading = 0.0;
  do {
    heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  } while (std::abs(std::sin(heading)) < data.min_vertical);
  b.vx = speed * std::cos(heading);
  b.vy = speed * std::sin(heading);
  b.radius = data.blob_sigma / std::max(grid_height, 1);
  return b;
}

float channel_gain(int channel, int channels) {
  if (channels <= 1) return 1.0f;
  return static_cast<float>(0.5 + 0.5 * channel / (channels - 1));
}

VideoLatent render_video(const std::vector<Position>& trajectory, const VideoShape& shape, double blob_sigma) {
  require(static_cast<int>(trajectory.size()) == shape.frames, ErrorCode::kShape,
          "trajectory length does not match frame count");
  VideoLatent v(shape);
  const double denom = 2.0 * blob_sigma * blob_sigma;
  for (int f = 0; f < shape.frames; ++f) {
    const double col = trajectory[f].x * (shape.width - 1);
    const double row = (1.0 - trajectory[f].y) * (shape.height - 1);
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        const double d2 = (y - row) * (y - row) + (x - col) * (x - col);
        const double value = std::exp(-d2 / denom);
        for (int c = 0; c < shape.channels; ++c) {
          v.at(c, f, y, x) = static_cast<float>(channel_gain(c, shape.channels) * value);
        }
      }
    }
  }
  return v;
}

Position decode_position(const VideoLatent& video, int frame) {
  const VideoShape& s = video.shape();
  std::vector<double> plane(static_cast<std::size_t>(s.height) * s.width, 0.0);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) plane[static_cast<std::size_t>(y) * s.width + x] += video.at(c, frame, y, x);
  const double peak = *std::max_element(plane.begin(), plane.end());
  if (!(peak > 0.0)) return {0.5, 0.5};
  const double threshold = kPeakFraction * peak;
  double total = 0.0, row = 0.0, col = 0.0;
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const double w = plane[static_cast<std::size_t>(y) * s.width + x];
      if (w <= threshold) continue;
      total += w;
      row += w * y;
      col += w * x;
    }
  }
  Position p;
  p.x = s.width > 1 ? (col / total) / (s.width - 1) : 0.5;
  p.y = s.height > 1 ? 1.0 - (row / total) / (s.height - 1) : 0.5;
  return p;
}

std::vector<double> decode_heights(const VideoLatent& video) {
  std::vector<double> h(static_cast<std::size_t>(video.shape().frames));
  for (int f = 0; f < video.shape().frames; ++f) h[static_cast<std::size_t>(f)] = decode_position(video, f).y;
  return h;
}

int pitch_bin(double height, int bins) {
  const int b = static_cast<int>(std::lround(height * (bins - 1)));
  return std::clamp(b, 0, bins - 1);
}

MelLatent render_audio(const std::vector<double>& heights, const MelShape& shape, const Rational& ratio) {
  const std::int64_t expected = static_cast<std::int64_t>(heights.size()) * ratio.num;
  require(expected % ratio.den == 0 && expected / ratio.den == shape.time, ErrorCode::kRatio,
          "audio steps do not match frames x temporal_ratio");
  MelLatent m(shape);
  for (int t = 0; t < shape.time; ++t) {
    const auto frame = static_cast<std::size_t>(std::int64_t{t} * ratio.den / ratio.num);
    const int bin = pitch_bin(heights[frame], shape.freq);
    for (int c = 0; c < shape.channels; ++c) m.at(c, t, bin) = 1.0f;
  }
  return m;
}

std::vector<int> decode_pitch_bins(const MelLatent& audio) {
  const MelShape& s = audio.shape();
  std::vector<int> bins(static_cast<std::size_t>(s.time));
  for (int t = 0; t < s.time; ++t) {
    int best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (int f = 0; f < s.freq; ++f) {
      double e = 0.0;
      for (int c = 0; c < s.channels; ++c) e += audio.at(c, t, f);
      if (e > best_value) {
        best_value = e;
        best = f;
      }
    }
    bins[static_cast<std::size_t>(t)] = best;
  }
  return bins;
}

ClipClasses classify_clip(const VideoLatent& video, const MelLatent& audio, const DataConfig& data) {
  ClipClasses out;
  const int frames = video.shape().frames;
  const Position start = decode_position(video, 0);
  const bool upper = start.y >= 0.5;
  const bool left = start.x < 0.5;
  out.quadrant = upper ? (left ? vocab::Quadrant::kUpperLeft : vocab::Quadrant::kUpperRight)
                       : (left ? vocab::Quadrant::kLowerLeft : vocab::Quadrant::kLowerRight);

  double travel = 0.0;
  Position prev = start;
  for (int f = 1; f < frames; ++f) {
    const Position p = decode_position(video, f);
    travel += std::hypot(p.x - prev.x, p.y - prev.y);
    prev = p;
  }
  const double mean_step = frames > 1 ? travel / (frames - 1) : 0.0;
  auto speeds = data.speeds;
  std::sort(speeds.begin(), speeds.end());
  if (mean_step < 0.5 * (speeds[0] + speeds[1])) {
    out.speed = vocab::SpeedClass::kSlow;
  } else if (mean_step < 0.5 * (speeds[1] + speeds[2])) {
    out.speed = vocab::SpeedClass::kMedium;
  } else {
    out.speed = vocab::SpeedClass::kFast;
  }

  const std::vector<int> bins = decode_pitch_bins(audio);
  const int delta = bins.empty() ? 0 : bins.back() - bins.front();
  out.pitch = delta < 0 ? vocab::PitchDirection::kDown
                        : (delta > 0 ? vocab::PitchDirection::kUp : vocab::PitchDirection::kFlat);
  return out;
}

Captions captions_for(const ClipClasses& classes) {
  Captions c;
  c.video = {vocab::kTagVideo, vocab::token(classes.quadrant), vocab::token(classes.speed),
             vocab::token(classes.pitch)};
  c.audio = {vocab::kTagAudio, vocab::token(classes.pitch), vocab::token(classes.speed)};
  c.speech = {vocab::kNoSpeech};
  return c;
}

SampleTuple gen_pair_from(const BallWorld& ball, std::int64_t clip_id, const ModelConfig& cfg,
                          const DataConfig& data) {
  SampleTuple s;
  s.clip_id = clip_id;
  s.video = render_video(ball_trajectory(ball, cfg.video_grid.frames), cfg.video_grid, data.blob_sigma);
  s.audio = render_audio(decode_heights(s.video), cfg.audio_grid, cfg.temporal_ratio);
  const Captions caps = captions_for(classify_clip(s.video, s.audio, data));
  s.video_caption = caps.video;
  s.audio_caption = caps.audio;
  s.speech = caps.speech;
  s.subset = SubsetTag::kTheta;
  s.reference = s.video.frames(0, 1);
  return s;
}

SampleTuple gen_pair(std::uint64_t seed, const ModelConfig& cfg, const DataConfig& data) {
  RandomStream rng(mix_seed(seed, 0x5A4D));
  const BallWorld ball = random_ball(rng, data, cfg.video_grid.height);
  return gen_pair_from(ball, static_cast<std::int64_t>(seed), cfg, data);
}

SampleTuple degrade(const SampleTuple& sample, std::uint64_t seed, double sigma) {
  require(sigma > 0.0, ErrorCode::kRange, "degrade sigma must be positive");
  SampleTuple out = sample;
  RandomStream rng(mix_seed(seed, 0xDE6));
  for (float& v : out.video.data()) v = static_cast<float>(v + sigma * rng.normal());
  out.subset = SubsetTag::kZeta;
  out.reference = out.video.frames(0, 1);
  return out;
}

std::vector<SampleTuple> make_dataset(std::size_t n_clean, std::size_t n_degraded, std::uint64_t seed,
                                      const Config& cfg) {
  require(n_clean >= 1, ErrorCode::kRange, "n_clean must be at least 1");
  std::vector<SampleTuple> samples;
  samples.reserve(n_clean + n_degraded);
  for (std::size_t i = 0; i < n_clean; ++i) {
    SampleTuple s = gen_pair(mix_seed(seed, i, 1), cfg.model, cfg.data);
    s.clip_id = static_cast<std::int64_t>(i);
    samples.push_back(std::move(s));
  }
  for (std::size_t j = 0; j < n_degraded; ++j) {
    SampleTuple s = degrade(gen_pair(mix_seed(seed, j, 2), cfg.model, cfg.data), mix_seed(seed, j, 3),
                            cfg.data.degrade_sigma);
    s.clip_id = static_cast<std::int64_t>(n_clean + j);
    samples.push_back(std::move(s));
  }
  return samples;
}

DatasetInfo build_dataset(std::size_t n_clean, std::size_t n_degraded, std::uint64_t seed, const Config& cfg,
                          const std::filesystem::path& dir) {
  const std::vector<SampleTuple> samples = make_dataset(n_clean, n_degraded, seed, cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string());

  DatasetInfo info;
  info.n_theta = n_clean;
  info.n_zeta = n_degraded;
  for (std::size_t first = 0, k = 0; first < samples.size(); first += kSamplesPerShard, ++k) {
    const std::size_t count = std::min(kSamplesPerShard, samples.size() - first);
    char name[32];
    std::snprintf(name, sizeof(name), "shard-%05zu.avsh", k);
    const auto path = dir / name;
    const std::span<const SampleTuple> chunk(samples.data() + first, count);
    write_shard(chunk, path);
    info.shards.push_back(path);
    info.checksums.push_back(payload_checksum(chunk));
  }

  info.manifest = dir / "manifest.txt";
  std::ofstream m(info.manifest, std::ios::trunc);
  require(m.good(), ErrorCode::kIo, "cannot write " + info.manifest.string());
  for (const SampleTuple& s : samples) m << s.clip_id << ' ' << (s.subset == SubsetTag::kTheta ? "THETA" : "ZETA") << '\n';
  require(m.good(), ErrorCode::kIo, "cannot write " + info.manifest.string());
  return info;
}

std::vector<SampleTuple> load_dataset(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorCode::kIo, "dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> shards;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.starts_with("shard-") && e.path().extension() == ".avsh") shards.push_back(e.path());
  }
  require(!shards.empty(), ErrorCode::kIo, "no shards in " + dir.string());
  std::sort(shards.begin(), shards.end());
  std::vector<SampleTuple> out;
  for (const auto& p : shards) {
    auto part = read_shard(p);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace avs
