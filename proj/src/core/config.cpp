// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/core/config.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "avs/core/error.hpp"
#include "avs/core/rng.hpp"

namespace avs {

using nlohmann::json;

Rational Rational::make(std::int64_t num, std::int64_t den) {
  require(den > 0 && num >= 0, ErrorCode::kRatio, "rational must be non-negative with positive denominator");
  const std::int64_t g = std::gcd(num, den);
  return g == 0 ? Rational{0, 1} : Rational{num / g, den / g};
}

std::string Rational::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

Rational Rational::parse(const std::string& text) {
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) return make(std::stoll(text), 1);
    return make(std::stoll(text.substr(0, slash)), std::stoll(text.substr(slash + 1)));
  } catch (const std::logic_error&) {
    fail(ErrorCode::kRatio, "cannot parse rational '" + text + "'");
  }
}

namespace {

int ceil_div_exact(std::int64_t a, std::int64_t b) { return static_cast<int>(a / b); }

// frames * r as an integer, or RATIO.
int scaled_frames(int frames, const Rational& r, const char* what) {
  const std::int64_t scaled = std::int64_t{frames} * r.num;
  require(scaled % r.den == 0, ErrorCode::kRatio,
          std::string(what) + " times frame count is not an integer");
  return ceil_div_exact(scaled, r.den);
}

void require_positive(int value, const char* name) {
  require(value > 0, ErrorCode::kRange, std::string(name) + " must be positive");
}

}  // namespace

int ModelConfig::video_token_count() const {
  return (video_grid.frames / video_patch[0]) * (video_grid.height / video_patch[1]) *
         (video_grid.width / video_patch[2]);
}

int ModelConfig::audio_token_count() const {
  return (audio_grid.time / audio_patch[0]) * (audio_grid.freq / audio_patch[1]);
}

int ModelConfig::video_patch_width() const {
  return video_grid.channels * video_patch[0] * video_patch[1] * video_patch[2];
}

int ModelConfig::audio_patch_width() const {
  return audio_grid.channels * audio_patch[0] * audio_patch[1];
}

int ModelConfig::mert_steps() const {
  return scaled_frames(video_grid.frames, mert_steps_per_frame, "mert rate");
}

int ModelConfig::hubert_steps() const {
  return scaled_frames(video_grid.frames, hubert_steps_per_frame, "hubert rate");
}

ModelConfig validate_config(const ModelConfig& cfg) {
  require_positive(cfg.video_depth, "video_depth");
  require_positive(cfg.audio_depth, "audio_depth");
  require_positive(cfg.video_dim, "video_dim");
  require_positive(cfg.audio_dim, "audio_dim");
  require_positive(cfg.text_dim, "text_dim");
  require_positive(cfg.video_heads, "video_heads");
  require_positive(cfg.audio_heads, "audio_heads");
  require_positive(cfg.ffn_hidden, "ffn_hidden");
  require_positive(cfg.adapter_hidden, "adapter_hidden");
  require_positive(cfg.time_embed_dim, "time_embed_dim");
  require(cfg.time_embed_dim % 2 == 0, ErrorCode::kDivisibility, "time_embed_dim must be even");
  require_positive(cfg.vocab_size, "vocab_size");
  require_positive(cfg.teacher_mert_dim, "teacher_mert_dim");
  require_positive(cfg.teacher_hubert_dim, "teacher_hubert_dim");

  const VideoShape& v = cfg.video_grid;
  const MelShape& a = cfg.audio_grid;
  require(v.channels > 0 && v.frames > 0 && v.height > 0 && v.width > 0, ErrorCode::kRange,
          "video_grid extents must be positive");
  require(a.channels > 0 && a.time > 0 && a.freq > 0, ErrorCode::kRange,
          "audio_grid extents must be positive");
  for (int p : cfg.video_patch) require_positive(p, "video_patch");
  for (int p : cfg.audio_patch) require_positive(p, "audio_patch");

  require(v.frames % cfg.video_patch[0] == 0, ErrorCode::kDivisibility, "video frames not divisible by pt");
  require(v.height % cfg.video_patch[1] == 0, ErrorCode::kDivisibility, "video height not divisible by ph");
  require(v.width % cfg.video_patch[2] == 0, ErrorCode::kDivisibility, "video width not divisible by pw");
  require(a.time % cfg.audio_patch[0] == 0, ErrorCode::kDivisibility, "audio time not divisible by pa_t");
  require(a.freq % cfg.audio_patch[1] == 0, ErrorCode::kDivisibility, "audio freq not divisible by pa_f");
  require(cfg.video_dim % cfg.video_heads == 0, ErrorCode::kDivisibility, "video_dim not divisible by heads");
  require(cfg.audio_dim % cfg.audio_heads == 0, ErrorCode::kDivisibility, "audio_dim not divisible by heads");

  require(cfg.frames_per_clip == v.frames, ErrorCode::kRange, "frames_per_clip must equal video_grid frames");
  require(cfg.temporal_ratio.den > 0 && cfg.temporal_ratio.num > 0, ErrorCode::kRatio,
          "temporal_ratio must be positive");
  const std::int64_t audio_steps = std::int64_t{v.frames} * cfg.temporal_ratio.num;
  require(audio_steps % cfg.temporal_ratio.den == 0 && audio_steps / cfg.temporal_ratio.den == a.time,
          ErrorCode::kRatio, "temporal_ratio x video frames must equal audio time steps");
  // Every audio token must sit inside one video token's frame bucket.
  const std::int64_t bucket = std::int64_t{cfg.video_patch[0]} * cfg.temporal_ratio.num;
  require(bucket % cfg.temporal_ratio.den == 0 && (bucket / cfg.temporal_ratio.den) % cfg.audio_patch[0] == 0,
          ErrorCode::kRatio, "audio patch does not align with video frame buckets");

  require(cfg.tau_mask >= 0.0 && cfg.tau_mask <= 1.0, ErrorCode::kRange, "tau_mask outside [0,1]");
  require(cfg.lambda_ssl >= 0.0, ErrorCode::kRange, "lambda_ssl must be >= 0");
  require(cfg.fusion_layer_ssl >= 0 && cfg.fusion_layer_ssl < cfg.fused_depth(), ErrorCode::kRange,
          "fusion_layer_ssl must be below the fused depth");
  require(cfg.seed_video_noise != cfg.seed_audio_noise, ErrorCode::kSameSeed,
          "video and audio noise seeds must differ");
  (void)cfg.mert_steps();
  (void)cfg.hubert_steps();
  return cfg;
}

Config validate_config(const Config& cfg) {
  validate_config(cfg.model);
  const TrainConfig& t = cfg.train;
  require(t.lr > 0.0, ErrorCode::kRange, "lr must be positive");
  require(t.batch >= 1 && t.grad_accum >= 1 && t.steps >= 0, ErrorCode::kRange, "bad batch/accum/steps");
  require(t.beta1 >= 0.0 && t.beta1 < 1.0 && t.beta2 >= 0.0 && t.beta2 < 1.0, ErrorCode::kRange, "bad betas");
  require(t.weight_decay >= 0.0, ErrorCode::kRange, "weight_decay must be >= 0");
  require(cfg.sampler.steps >= 1, ErrorCode::kRange, "sampler steps must be >= 1");
  require(cfg.pipeline.capacity >= 1, ErrorCode::kRange, "pipeline capacity must be >= 1");
  require(cfg.pipeline.source_frames >= cfg.model.frames_per_clip, ErrorCode::kRange,
          "sources must be at least one clip long");
  require(cfg.data.degrade_sigma > 0.0, ErrorCode::kRange, "degrade_sigma must be positive");
  return cfg;
}

Config default_config() { return Config{}; }

Config paper_scale_config() {
  Config cfg;
  cfg.train.lr = 5e-6;
  cfg.train.batch = 32;  // x4 accumulation = effective 128
  cfg.train.grad_accum = 4;
  cfg.train.steps = 50000;
  cfg.model.tau_mask = 0.8;
  cfg.model.lambda_ssl = 1.0;
  return cfg;
}

// JSON mapping. Missing keys keep their defaults, so a config file only has
// to spell out what it overrides.
namespace {

template <typename T>
void get_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void get_rational(const json& j, const char* key, Rational& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  out = v.is_string() ? Rational::parse(v.get<std::string>()) : Rational::make(v.get<std::int64_t>(), 1);
}

json to_json(const ModelConfig& m) {
  return json{
      {"video_depth", m.video_depth},
      {"audio_depth", m.audio_depth},
      {"video_dim", m.video_dim},
      {"audio_dim", m.audio_dim},
      {"text_dim", m.text_dim},
      {"video_heads", m.video_heads},
      {"audio_heads", m.audio_heads},
      {"ffn_hidden", m.ffn_hidden},
      {"adapter_hidden", m.adapter_hidden},
      {"time_embed_dim", m.time_embed_dim},
      {"vocab_size", m.vocab_size},
      {"fusion_layer_ssl", m.fusion_layer_ssl},
      {"v2a_frame_bucketed", m.v2a_frame_bucketed},
      {"frames_per_clip", m.frames_per_clip},
      {"video_grid", {m.video_grid.channels, m.video_grid.frames, m.video_grid.height, m.video_grid.width}},
      {"audio_grid", {m.audio_grid.channels, m.audio_grid.time, m.audio_grid.freq}},
      {"video_patch", m.video_patch},
      {"audio_patch", m.audio_patch},
      {"temporal_ratio", m.temporal_ratio.str()},
      {"tau_mask", m.tau_mask},
      {"lambda_ssl", m.lambda_ssl},
      {"seed_video_noise", m.seed_video_noise},
      {"seed_audio_noise", m.seed_audio_noise},
      {"teacher_mert_dim", m.teacher_mert_dim},
      {"teacher_hubert_dim", m.teacher_hubert_dim},
      {"mert_steps_per_frame", m.mert_steps_per_frame.str()},
      {"hubert_steps_per_frame", m.hubert_steps_per_frame.str()},
      {"teacher_seed", m.teacher_seed},
  };
}

void from_json(const json& j, ModelConfig& m) {
  get_opt(j, "video_depth", m.video_depth);
  get_opt(j, "audio_depth", m.audio_depth);
  get_opt(j, "video_dim", m.video_dim);
  get_opt(j, "audio_dim", m.audio_dim);
  get_opt(j, "text_dim", m.text_dim);
  get_opt(j, "video_heads", m.video_heads);
  get_opt(j, "audio_heads", m.audio_heads);
  get_opt(j, "ffn_hidden", m.ffn_hidden);
  get_opt(j, "adapter_hidden", m.adapter_hidden);
  get_opt(j, "time_embed_dim", m.time_embed_dim);
  get_opt(j, "vocab_size", m.vocab_size);
  get_opt(j, "fusion_layer_ssl", m.fusion_layer_ssl);
  get_opt(j, "v2a_frame_bucketed", m.v2a_frame_bucketed);
  get_opt(j, "frames_per_clip", m.frames_per_clip);
  if (j.contains("video_grid")) {
    const auto g = j.at("video_grid").get<std::array<int, 4>>();
    m.video_grid = {g[0], g[1], g[2], g[3]};
  }
  if (j.contains("audio_grid")) {
    const auto g = j.at("audio_grid").get<std::array<int, 3>>();
    m.audio_grid = {g[0], g[1], g[2]};
  }
  get_opt(j, "video_patch", m.video_patch);
  get_opt(j, "audio_patch", m.audio_patch);
  get_rational(j, "temporal_ratio", m.temporal_ratio);
  get_opt(j, "tau_mask", m.tau_mask);
  get_opt(j, "lambda_ssl", m.lambda_ssl);
  get_opt(j, "seed_video_noise", m.seed_video_noise);
  get_opt(j, "seed_audio_noise", m.seed_audio_noise);
  get_opt(j, "teacher_mert_dim", m.teacher_mert_dim);
  get_opt(j, "teacher_hubert_dim", m.teacher_hubert_dim);
  get_rational(j, "mert_steps_per_frame", m.mert_steps_per_frame);
  get_rational(j, "hubert_steps_per_frame", m.hubert_steps_per_frame);
  get_opt(j, "teacher_seed", m.teacher_seed);
}

json to_json(const Config& c) {
  const char* schedule = c.sampler.reference_schedule == ReferenceSchedule::kClean ? "clean" : "path";
  return json{
      {"model", to_json(c.model)},
      {"data",
       {{"degrade_sigma", c.data.degrade_sigma},
        {"speeds", c.data.speeds},
        {"min_vertical", c.data.min_vertical},
        {"blob_sigma", c.data.blob_sigma}}},
      {"train",
       {{"lr", c.train.lr},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"weight_decay", c.train.weight_decay},
        {"batch", c.train.batch},
        {"grad_accum", c.train.grad_accum},
        {"steps", c.train.steps},
        {"checkpoint_every", c.train.checkpoint_every},
        {"seed_init", c.train.seed_init},
        {"seed_timestep", c.train.seed_timestep},
        {"seed_data_order", c.train.seed_data_order},
        {"loss_ema_decay", c.train.loss_ema_decay}}},
      {"sampler", {{"steps", c.sampler.steps}, {"reference_schedule", schedule}}},
      {"pipeline",
       {{"capacity", c.pipeline.capacity},
        {"num_sources", c.pipeline.num_sources},
        {"source_frames", c.pipeline.source_frames}}},
  };
}

Config from_json_tree(const json& j) {
  Config c;
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("data")) {
    const json& d = j.at("data");
    get_opt(d, "degrade_sigma", c.data.degrade_sigma);
    get_opt(d, "speeds", c.data.speeds);
    get_opt(d, "min_vertical", c.data.min_vertical);
    get_opt(d, "blob_sigma", c.data.blob_sigma);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    get_opt(t, "lr", c.train.lr);
    get_opt(t, "beta1", c.train.beta1);
    get_opt(t, "beta2", c.train.beta2);
    get_opt(t, "eps", c.train.eps);
    get_opt(t, "weight_decay", c.train.weight_decay);
    get_opt(t, "batch", c.train.batch);
    get_opt(t, "grad_accum", c.train.grad_accum);
    get_opt(t, "steps", c.train.steps);
    get_opt(t, "checkpoint_every", c.train.checkpoint_every);
    get_opt(t, "seed_init", c.train.seed_init);
    get_opt(t, "seed_timestep", c.train.seed_timestep);
    get_opt(t, "seed_data_order", c.train.seed_data_order);
    get_opt(t, "loss_ema_decay", c.train.loss_ema_decay);
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    get_opt(s, "steps", c.sampler.steps);
    if (s.contains("reference_schedule")) {
      const auto name = s.at("reference_schedule").get<std::string>();
      require(name == "clean" || name == "path", ErrorCode::kRange, "reference_schedule must be clean|path");
      c.sampler.reference_schedule = name == "clean" ? ReferenceSchedule::kClean : ReferenceSchedule::kPath;
    }
  }
  if (j.contains("pipeline")) {
    const json& p = j.at("pipeline");
    get_opt(p, "capacity", c.pipeline.capacity);
    get_opt(p, "num_sources", c.pipeline.num_sources);
    get_opt(p, "source_frames", c.pipeline.source_frames);
  }
  return c;
}

}  // namespace

std::string config_to_json(const Config& cfg) { return to_json(cfg).dump(2); }

Config config_from_json(const std::string& text) {
  try {
    return from_json_tree(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorCode::kRange, std::string("invalid config: ") + e.what());
  }
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void save_config(const Config& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write config " + path.string());
  out << config_to_json(cfg) << '\n';
}

Config with_seed(Config cfg, std::uint64_t seed) {
  cfg.train.seed_init = mix_seed(seed, 1);
  cfg.train.seed_timestep = mix_seed(seed, 2);
  cfg.train.seed_data_order = mix_seed(seed, 3);
  cfg.model.seed_video_noise = mix_seed(seed, 4);
  cfg.model.seed_audio_noise = mix_seed(seed, 5);
  cfg.model.teacher_seed = mix_seed(seed, 6);
  return cfg;
}

}  // namespace avs
