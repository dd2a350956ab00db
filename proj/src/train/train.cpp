// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/train/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "avs/core/error.hpp"
#include "avs/core/rng.hpp"
#include "avs/core/shard.hpp"
#include "avs/experts/patchify.hpp"

namespace avs {

using nn::Matrix;
using nn::Var;

namespace {

constexpr std::uint64_t kTimestepSalt = 0x5EED;

bool has_prefix(const std::string& s, std::string_view p) { return s.compare(0, p.size(), p) == 0; }

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

bool is_video_branch(const std::string& name) { return has_prefix(name, "video."); }
bool is_audio_branch(const std::string& name) { return has_prefix(name, "audio."); }

TrainState init_train_state(const Config& cfg_in, const TrainOptions& options) {
  const Config cfg = validate_config(cfg_in);
  require(cfg.model.seed_video_noise != cfg.model.seed_audio_noise, ErrorCode::kSameSeed,
          "video and audio noise seeds must differ");
  require(cfg.train.batch >= 1 && cfg.train.grad_accum >= 1, ErrorCode::kRange, "batch and grad_accum must be >= 1");
  TrainState s;
  s.cfg = cfg;
  s.options = options;
  s.model = init_fused_model(cfg.model, cfg.train.seed_init);
  for (const auto& [name, p] : s.model.params) {
    s.opt.m[name] = Matrix::Zero(p.rows(), p.cols());
    s.opt.v[name] = Matrix::Zero(p.rows(), p.cols());
    s.grad_sum[name] = Matrix::Zero(p.rows(), p.cols());
  }
  s.teachers = teacher_maps(cfg.model, cfg.model.teacher_seed);
  return s;
}

PreparedSample prepare_sample(const TrainState& state, const SampleTuple& sample, std::int64_t step, int index) {
  const ModelConfig& mc = state.cfg.model;
  require(sample.video.shape() == mc.video_grid && sample.audio.shape() == mc.audio_grid, ErrorCode::kShape,
          "sample does not match the configured grids");
  PreparedSample p;
  const auto st = static_cast<std::uint64_t>(step);
  const auto ix = static_cast<std::uint64_t>(index);
  p.noise_level = state.options.fixed_noise_level
                      ? *state.options.fixed_noise_level
                      : RandomStream(mix_seed(state.cfg.train.seed_timestep ^ kTimestepSalt, st, ix)).uniform();
  p.noise = state.options.independent_noise
                ? sample_noise_pair(mc.video_grid, mc.audio_grid, mix_seed(mc.seed_video_noise, st, ix),
                                    mix_seed(mc.seed_audio_noise, st, ix))
                : shared_stream_noise(mc.video_grid, mc.audio_grid, mix_seed(mc.seed_video_noise, st, ix));

  const double t = 1.0 - p.noise_level;
  const Matrix v1 = patchify_video(sample.video, mc.video_patch).tokens;
  const Matrix v0 = patchify_video(p.noise.eps_video, mc.video_patch).tokens;
  const Matrix a1 = patchify_audio(sample.audio, mc.audio_patch).tokens;
  const Matrix a0 = patchify_audio(p.noise.eps_audio, mc.audio_patch).tokens;

  VideoLatent ref_full(mc.video_grid);
  ref_full.set_frames(0, sample.reference);
  const Matrix ref = patchify_video(ref_full, mc.video_patch).tokens;
  const Matrix mask = first_frame_mask(mc);
  p.video_xt = interpolate_path(v0, v1, t).cwiseProduct(Matrix::Ones(mask.rows(), mask.cols()) - mask) +
               ref.cwiseProduct(mask);
  p.audio_xt = interpolate_path(a0, a1, t);
  p.video_target = velocity_target(v0, v1);
  p.audio_target = velocity_target(a0, a1);
  p.captions = {sample.video_caption, sample.audio_caption, sample.speech};
  p.subset = sample.subset;
  if (mc.lambda_ssl != 0.0) p.teachers = teacher_features(sample.audio, state.teachers, mc);
  return p;
}

SampleLossVars sample_losses(const TrainState& state, const PreparedSample& prep, Var video_pred, Var audio_pred,
                             Var tap, const SslHeads& heads) {
  const ModelConfig& mc = state.cfg.model;
  nn::Tape& tape = video_pred.tape();
  SampleLossVars out;
  out.video_active = !state.options.mask_low_quality || video_loss_active(prep.subset, prep.noise_level, mc.tau_mask);
  // The conditioning frame is given, so it carries no velocity target.
  const Matrix mask = first_frame_mask(mc);
  const Matrix keep = Matrix::Ones(mask.rows(), mask.cols()) - mask;
  out.video = out.video_active ? fm_loss_subset(video_pred, tape.constant(prep.video_target), keep)
                               : tape.constant(Matrix::Zero(1, 1));
  out.mel = fm_loss(audio_pred, tape.constant(prep.audio_target));
  out.ssl = mc.lambda_ssl != 0.0 ? ssl_loss(tap, prep.teachers, heads, mc) : tape.constant(Matrix::Zero(1, 1));
  out.total = total_loss(out.video, out.mel, out.ssl, mc.lambda_ssl);
  return out;
}

StepMetrics train_step(TrainState& state, std::span<const SampleTuple> batch) {
  require(!batch.empty(), ErrorCode::kRange, "empty batch");
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig& mc = state.cfg.model;
  const bool use_ssl = mc.lambda_ssl != 0.0;
  const double weight = 1.0 / static_cast<double>(batch.size());

  ParamMap step_grad;
  StepMetrics m;
  m.step = state.step + 1;
  double ssl_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreparedSample prep = prepare_sample(state, batch[i], state.step, static_cast<int>(i));
    nn::Tape tape;
    BoundParams p(tape, state.model.params, true);
    const FusedOutput out = fused_forward(p, state.model, prep.video_xt, prep.audio_xt, prep.captions,
                                          prep.noise_level);
    SslHeads heads;
    if (use_ssl) heads = {p("ssl.mert.w"), p("ssl.mert.b"), p("ssl.hubert.w"), p("ssl.hubert.b")};
    const SampleLossVars l = sample_losses(state, prep, out.video_velocity, out.audio_velocity, out.ssl_tap, heads);
    const double lv = l.video.value()(0, 0), la = l.mel.value()(0, 0), ls = l.ssl.value()(0, 0);
    if (!std::isfinite(lv) || !std::isfinite(la) || !std::isfinite(ls)) {
      fail(ErrorCode::kNonFinite, "non-finite loss at step " + std::to_string(m.step) + " sample " +
                                      std::to_string(i) + " (clip " + std::to_string(batch[i].clip_id) +
                                      ", s=" + fmt_double(prep.noise_level) + "): l_video=" + fmt_double(lv) +
                                      " l_mel=" + fmt_double(la) + " l_ssl=" + fmt_double(ls));
    }
    m.loss.video += weight * lv;
    m.loss.mel += weight * la;
    ssl_sum += weight * ls;
    m.mean_noise_level += weight * prep.noise_level;

    tape.backward(l.total);
    for (const auto& [name, var] : p.vars()) {
      if (!tape.has_grad(var)) continue;
      auto it = step_grad.find(name);
      if (it == step_grad.end()) {
        step_grad.emplace(name, weight * tape.grad(var));
      } else {
        it->second += weight * tape.grad(var);
      }
    }
  }
  if (use_ssl) m.loss.ssl = ssl_sum;

  // Commit only after every sample succeeded.
  for (auto& [name, g] : step_grad) state.grad_sum.at(name) += g;
  ++state.accum;
  ++state.step;
  if (state.accum == state.cfg.train.grad_accum) {
    apply_optimizer(state);
    m.updated = true;
  }
  const double d = state.cfg.train.loss_ema_decay;
  if (!state.ema_started) {
    state.ema = m.loss;
    state.ema_started = true;
  } else {
    state.ema.video = d * state.ema.video + (1 - d) * m.loss.video;
    state.ema.mel = d * state.ema.mel + (1 - d) * m.loss.mel;
    if (m.loss.ssl) state.ema.ssl = d * state.ema.ssl.value_or(*m.loss.ssl) + (1 - d) * *m.loss.ssl;
  }
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

void apply_optimizer(TrainState& state) {
  const TrainConfig& tc = state.cfg.train;
  AdamWState& o = state.opt;
  ++o.t;
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(o.t));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(o.t));
  const double inv_accum = 1.0 / tc.grad_accum;
  for (auto& [name, param] : state.model.params) {
    Matrix& g = state.grad_sum.at(name);
    Matrix& m = o.m.at(name);
    Matrix& v = o.v.at(name);
    g *= inv_accum;
    m = tc.beta1 * m + (1.0 - tc.beta1) * g;
    v = tc.beta2 * v + (1.0 - tc.beta2) * g.cwiseProduct(g);
    const Matrix step = (m / bc1).array() / ((v / bc2).array().sqrt() + tc.eps);
    if (tc.weight_decay != 0.0) param -= tc.lr * tc.weight_decay * param;
    param -= tc.lr * step;
    g.setZero();
  }
  state.accum = 0;
}

namespace {

NamedTensor to_tensor(const std::string& name, const Matrix& m) {
  return {name, {m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size())};
}

void from_tensor(const NamedTensor& t, Matrix& m) {
  require(t.shape.size() == 2 && t.shape[0] == m.rows() && t.shape[1] == m.cols(), ErrorCode::kShape,
          "checkpoint shape mismatch for '" + t.name + "'");
  std::copy(t.data.begin(), t.data.end(), m.data());
}

}  // namespace

void save_train_state(const TrainState& s, const std::filesystem::path& path) {
  std::vector<NamedTensor> out;
  for (const auto& [name, p] : s.model.params) out.push_back(to_tensor("param/" + name, p));
  for (const auto& [name, p] : s.opt.m) out.push_back(to_tensor("adam.m/" + name, p));
  for (const auto& [name, p] : s.opt.v) out.push_back(to_tensor("adam.v/" + name, p));
  for (const auto& [name, p] : s.grad_sum) out.push_back(to_tensor("grad/" + name, p));
  out.push_back({"meta",
                 {1, 7},
                 {static_cast<double>(s.step), static_cast<double>(s.accum), static_cast<double>(s.opt.t),
                  s.ema_started ? 1.0 : 0.0, s.ema.video, s.ema.mel, s.ema.ssl.value_or(NAN)}});
  write_tensors(out, path);
}

TrainState load_train_state(const Config& cfg, const std::filesystem::path& path, const TrainOptions& options) {
  TrainState s = init_train_state(cfg, options);
  const std::vector<NamedTensor> tensors = read_tensors(path);
  std::size_t seen = 0;
  for (const NamedTensor& t : tensors) {
    if (t.name == "meta") {
      require(t.data.size() == 7, ErrorCode::kCorrupt, "bad checkpoint meta record");
      s.step = static_cast<std::int64_t>(t.data[0]);
      s.accum = static_cast<int>(t.data[1]);
      s.opt.t = static_cast<std::int64_t>(t.data[2]);
      s.ema_started = t.data[3] != 0.0;
      s.ema.video = t.data[4];
      s.ema.mel = t.data[5];
      if (!std::isnan(t.data[6])) s.ema.ssl = t.data[6];
      continue;
    }
    const auto slash = t.name.find('/');
    require(slash != std::string::npos, ErrorCode::kNameMismatch, "unexpected checkpoint entry '" + t.name + "'");
    const std::string group = t.name.substr(0, slash), name = t.name.substr(slash + 1);
    ParamMap* target = group == "param"    ? &s.model.params
                       : group == "adam.m" ? &s.opt.m
                       : group == "adam.v" ? &s.opt.v
                       : group == "grad"   ? &s.grad_sum
                                           : nullptr;
    require(target != nullptr && target->count(name) == 1, ErrorCode::kNameMismatch,
            "unexpected checkpoint entry '" + t.name + "'");
    from_tensor(t, target->at(name));
    ++seen;
  }
  require(seen == 4 * s.model.params.size(), ErrorCode::kNameMismatch, "checkpoint is missing entries");
  require(s.accum >= 0 && s.accum < s.cfg.train.grad_accum, ErrorCode::kCorrupt,
          "checkpoint accumulation counter out of range");
  return s;
}

BatchSource dataset_source(std::vector<SampleTuple> dataset, std::uint64_t seed, int batch) {
  require(!dataset.empty(), ErrorCode::kRange, "empty dataset");
  require(batch >= 1, ErrorCode::kRange, "batch must be >= 1");
  auto data = std::make_shared<const std::vector<SampleTuple>>(std::move(dataset));
  return [data, seed, batch](std::int64_t step) {
    const std::size_t n = data->size();
    std::vector<SampleTuple> out;
    out.reserve(static_cast<std::size_t>(batch));
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> perm(n);
    for (int j = 0; j < batch; ++j) {
      const auto pos = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch) + j;
      const auto epoch = static_cast<std::int64_t>(pos / n);
      if (epoch != cached_epoch) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        RandomStream rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
        for (std::size_t k = n; k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
        cached_epoch = epoch;
      }
      out.push_back((*data)[perm[pos % n]]);
    }
    return out;
  };
}

std::string format_metrics(const StepMetrics& m) {
  std::ostringstream os;
  os << "step=" << m.step << " l_video=" << fmt_double(m.loss.video) << " l_mel=" << fmt_double(m.loss.mel);
  if (m.loss.ssl) os << " l_ssl=" << fmt_double(*m.loss.ssl);
  os << " s=" << fmt_double(m.mean_noise_level) << " wall=" << fmt_double(m.seconds);
  return os.str();
}

std::vector<StepMetrics> train_loop(TrainState& state, const BatchSource& source, int steps,
                                    const LoopOptions& options) {
  require(steps >= 0, ErrorCode::kRange, "steps must be >= 0");
  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "metrics.log", std::ios::app);
    require(log.good(), ErrorCode::kIo, "cannot open metrics log");
  }
  auto checkpoint = [&]() {
    if (options.out_dir.empty()) return;
    char name[64];
    std::snprintf(name, sizeof name, "state-%06lld.avsh", static_cast<long long>(state.step));
    save_train_state(state, options.out_dir / name);
    save_model(state.model, options.out_dir / "model.avsh");
  };
  std::vector<StepMetrics> history;
  history.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const std::vector<SampleTuple> batch = source(state.step);
    history.push_back(train_step(state, batch));
    const std::string line = format_metrics(history.back());
    if (log.is_open()) log << line << '\n' << std::flush;
    if (options.log != nullptr) *options.log << line << '\n';
    if (options.checkpoint_every > 0 && state.step % options.checkpoint_every == 0) checkpoint();
  }
  checkpoint();
  return history;
}

}  // namespace avs
