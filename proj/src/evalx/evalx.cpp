// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/evalx/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "avs/core/error.hpp"
#include "avs/core/rng.hpp"
#include "avs/experts/patchify.hpp"
#include "avs/fm/fm.hpp"
#include "avs/synthdata/synthdata.hpp"
#include "json.hpp"

namespace avs {

using nn::Matrix;

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorCode::kShape, "correlated series differ in length");
  if (a.empty()) return 0.0;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Alignment av_alignment(const VideoLatent& video, const MelLatent& audio) {
  const int frames = video.shape().frames;
  const int steps = audio.shape().time;
  require(frames >= 1 && steps % frames == 0, ErrorCode::kRatio, "audio length is not a multiple of the frame count");
  const int per_frame = steps / frames;
  const int bins = audio.shape().freq;
  const std::vector<double> heights = decode_heights(video);
  const std::vector<int> pitch = decode_pitch_bins(audio);
  std::vector<double> x(static_cast<std::size_t>(steps)), y(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    x[static_cast<std::size_t>(i)] = pitch_bin(heights[static_cast<std::size_t>(i / per_frame)], bins);
    y[static_cast<std::size_t>(i)] = pitch[static_cast<std::size_t>(i)];
  }
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) return {0.0, true};
  return {pearson(x, y), false};
}

std::vector<GeneratedClip> generate_clips(const FusedModel& model, const Config& cfg, int n, std::uint64_t seed,
                                          bool shared_noise) {
  std::vector<GeneratedClip> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    GeneratedClip clip;
    clip.prompt = gen_pair(mix_seed(seed, ui, 0xE7A1), cfg.model, cfg.data);
    SampleRequest req;
    req.reference = clip.prompt.reference;
    req.captions = {clip.prompt.video_caption, clip.prompt.audio_caption, clip.prompt.speech};
    req.seed_video = mix_seed(seed, ui, 0x51);
    req.seed_audio = mix_seed(seed, ui, 0x52);
    req.steps = cfg.sampler.steps;
    req.schedule = cfg.sampler.reference_schedule;
    req.shared_noise = shared_noise;
    SampleResult r = euler_sample(model, req);
    clip.video = std::move(r.video);
    clip.audio = std::move(r.audio);
    out.push_back(std::move(clip));
  }
  return out;
}

PermutationResult alignment_permutation_test(const std::vector<VideoLatent>& videos,
                                             const std::vector<MelLatent>& audios, int permutations,
                                             std::uint64_t seed) {
  require(videos.size() == audios.size() && videos.size() >= 2, ErrorCode::kShape,
          "permutation test needs at least two matched pairs");
  require(permutations >= 1, ErrorCode::kRange, "permutations must be >= 1");
  const std::size_t n = videos.size();
  // r for every (video i, audio j) combination, computed once.
  std::vector<double> r(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) r[i * n + j] = av_alignment(videos[i], audios[j]).value;
  }
  PermutationResult out;
  for (std::size_t i = 0; i < n; ++i) out.observed += r[i * n + i] / static_cast<double>(n);

  RandomStream rng(mix_seed(seed, 0xA11));
  std::vector<std::size_t> perm(n);
  int at_least = 0;
  double sum_abs = 0.0, sum = 0.0;
  for (int k = 0; k < permutations; ++k) {
    // Sattolo's algorithm: a uniformly random single cycle, so no clip keeps
    // its own audio.
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i)]);
    double mean = 0.0, mean_abs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = r[i * n + perm[i]];
      mean += v / static_cast<double>(n);
      mean_abs += std::abs(v) / static_cast<double>(n);
    }
    sum += mean;
    sum_abs += mean_abs;
    if (mean >= out.observed) ++at_least;
  }
  out.null_mean = sum / permutations;
  out.null_mean_abs = sum_abs / permutations;
  out.p_value = (1.0 + at_least) / (1.0 + permutations);
  return out;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["av_alignment"] = r.av_alignment;
  j["av_alignment_direction"] = "higher_is_better";
  j["av_alignment_signed"] = r.av_alignment_signed;
  j["degenerate_clips"] = r.degenerate_clips;
  j["clips"] = r.clips;
  j["fm_val_loss"] = r.fm_val_loss;
  j["noise_independence"] = {{"max_abs_corr", r.noise_max_abs_corr}, {"shape_robust", r.noise_shape_robust}};
  j["caption_adherence"] = r.caption_adherence;
  j["per_clip"] = r.per_clip;
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    EvalReport r;
    r.av_alignment = j.at("av_alignment").get<double>();
    r.av_alignment_signed = j.at("av_alignment_signed").get<double>();
    r.degenerate_clips = j.at("degenerate_clips").get<int>();
    r.clips = j.at("clips").get<int>();
    r.fm_val_loss = j.at("fm_val_loss").get<double>();
    r.noise_max_abs_corr = j.at("noise_independence").at("max_abs_corr").get<double>();
    r.noise_shape_robust = j.at("noise_independence").at("shape_robust").get<bool>();
    r.caption_adherence = j.at("caption_adherence").get<double>();
    r.per_clip = j.at("per_clip").get<std::vector<double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kCorrupt, std::string("bad report: ") + e.what());
  }
}

double caption_adherence(const std::vector<GeneratedClip>& clips, const DataConfig& data) {
  if (clips.empty()) return 0.0;
  int hits = 0;
  for (const GeneratedClip& c : clips) {
    const ClipClasses got = classify_clip(c.video, c.audio, data);
    const TokenSeq32& prompt = c.prompt.audio_caption;
    if (std::find(prompt.begin(), prompt.end(), vocab::token(got.pitch)) != prompt.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(clips.size());
}

double fm_validation_loss(const FusedModel& model, const Config& cfg, int pairs, std::uint64_t seed) {
  const ModelConfig& mc = cfg.model;
  const Matrix mask = first_frame_mask(mc);
  const Matrix keep = Matrix::Ones(mask.rows(), mask.cols()) - mask;
  constexpr std::array<double, 5> kLevels{0.1, 0.3, 0.5, 0.7, 0.9};
  double total = 0.0;
  int count = 0;
  for (int j = 0; j < pairs; ++j) {
    const auto uj = static_cast<std::uint64_t>(j);
    const SampleTuple s = gen_pair(mix_seed(seed, uj, 0xFA1), mc, cfg.data);
    const Captions32 caps{s.video_caption, s.audio_caption, s.speech};
    const Matrix v1 = patchify_video(s.video, mc.video_patch).tokens;
    const Matrix a1 = patchify_audio(s.audio, mc.audio_patch).tokens;
    for (std::size_t k = 0; k < kLevels.size(); ++k) {
      const NoisePair n = sample_noise_pair(mc.video_grid, mc.audio_grid, mix_seed(seed, uj, 2 * k + 11),
                                            mix_seed(seed, uj, 2 * k + 12));
      const Matrix v0 = patchify_video(n.eps_video, mc.video_patch).tokens;
      const Matrix a0 = patchify_audio(n.eps_audio, mc.audio_patch).tokens;
      const double t = 1.0 - kLevels[k];
      const Matrix vt = interpolate_path(v0, v1, t).cwiseProduct(keep) + v1.cwiseProduct(mask);
      nn::Tape tape;
      BoundParams p(tape, model.params, false);
      const FusedOutput out = fused_forward(p, model, vt, interpolate_path(a0, a1, t), caps, kLevels[k]);
      const Matrix dv = (out.video_velocity.value() - velocity_target(v0, v1)).cwiseProduct(keep);
      total += dv.squaredNorm() / keep.sum() + fm_loss(out.audio_velocity.value(), velocity_target(a0, a1));
      ++count;
    }
  }
  return count > 0 ? total / count : 0.0;
}

NoiseCheck check_noise(bool shared_noise, std::uint64_t seed) {
  const VideoShape v4{8, 4, 8, 8}, v8{8, 8, 8, 8};
  const MelShape a{4, 128, 8};
  NoiseCheck out;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const std::uint64_t sv = mix_seed(seed, k, 1), sa = mix_seed(seed, k, 2);
    const NoisePair p = shared_noise ? shared_stream_noise(v8, a, sv) : sample_noise_pair(v8, a, sv, sa);
    const auto ev = p.eps_video.data();
    const auto ea = p.eps_audio.data();
    const std::vector<double> x(ev.begin(), ev.begin() + 4096), y(ea.begin(), ea.begin() + 4096);
    out.max_abs_corr = std::max(out.max_abs_corr, std::abs(pearson(x, y)));
  }
  const std::uint64_t sv = mix_seed(seed, 99, 1), sa = mix_seed(seed, 99, 2);
  const NoisePair p4 = shared_noise ? shared_stream_noise(v4, a, sv) : sample_noise_pair(v4, a, sv, sa);
  const NoisePair p8 = shared_noise ? shared_stream_noise(v8, a, sv) : sample_noise_pair(v8, a, sv, sa);
  out.shape_robust = p4.eps_audio == p8.eps_audio;
  return out;
}

EvalReport evaluate(const FusedModel& model, const Config& cfg, int clips, std::uint64_t seed, bool shared_noise) {
  EvalReport r;
  const std::vector<GeneratedClip> gen = generate_clips(model, cfg, clips, seed, shared_noise);
  r.clips = clips;
  for (const GeneratedClip& c : gen) {
    const Alignment a = av_alignment(c.video, c.audio);
    r.per_clip.push_back(a.value);
    r.degenerate_clips += a.degenerate ? 1 : 0;
    r.av_alignment += std::abs(a.value);
    r.av_alignment_signed += a.value;
  }
  if (clips > 0) {
    r.av_alignment /= clips;
    r.av_alignment_signed /= clips;
  }
  r.caption_adherence = caption_adherence(gen, cfg.data);
  r.fm_val_loss = fm_validation_loss(model, cfg, 8, mix_seed(seed, 0xFA));
  const NoiseCheck nc = check_noise(shared_noise, seed);
  r.noise_max_abs_corr = nc.max_abs_corr;
  r.noise_shape_robust = nc.shape_robust;
  return r;
}

PipelineFeed::PipelineFeed(const Config& cfg, std::uint64_t seed, AnnotatorMode mode)
    : cfg_(cfg),
      store_(std::make_unique<SourceStore>(cfg, seed)),
      buffer_(std::make_unique<BoundedBuffer>(static_cast<std::size_t>(cfg.pipeline.capacity))) {
  producer_ = std::thread([this, seed, mode] {
    ProducerOptions opt;
    opt.mode = mode;
    try {
      producer_run(*store_, *buffer_, std::numeric_limits<std::size_t>::max(), seed, opt);
    } catch (const Error&) {
      // Cancelled by the destructor.
    }
  });
}

PipelineFeed::~PipelineFeed() {
  buffer_->cancel();
  if (producer_.joinable()) producer_.join();
}

BatchSource PipelineFeed::source(int batch) {
  require(batch >= 1 && batch <= cfg_.pipeline.capacity, ErrorCode::kRange, "batch must fit in the buffer");
  return [this, batch](std::int64_t) {
    ConsumedBatch got = consume_batch(*buffer_, static_cast<std::size_t>(batch), std::chrono::seconds(60), cfg_.data);
    *audit_failures_ += got.audit_failures;
    *consumed_ += got.samples.size();
    return std::move(got.samples);
  };
}

AblationName parse_ablation(const std::string& name) {
  if (name == "NO_INSS") return AblationName::kNoInss;
  if (name == "NO_LQLS") return AblationName::kNoLqls;
  if (name == "NO_SSL") return AblationName::kNoSsl;
  if (name == "OFFLINE_ANNOT") return AblationName::kOfflineAnnot;
  fail(ErrorCode::kUsage, "unknown ablation '" + name + "' (NO_INSS, NO_LQLS, NO_SSL, OFFLINE_ANNOT)");
}

std::string to_string(AblationName name) {
  switch (name) {
    case AblationName::kNoInss:
      return "NO_INSS";
    case AblationName::kNoLqls:
      return "NO_LQLS";
    case AblationName::kNoSsl:
      return "NO_SSL";
    case AblationName::kOfflineAnnot:
      return "OFFLINE_ANNOT";
  }
  return "?";
}

namespace {

struct Arm {
  Config cfg;
  TrainOptions options;
  bool shared_noise_sampler = false;
  AnnotatorMode annot = AnnotatorMode::kOnline;
  bool use_pipeline = false;
};

struct ArmOutcome {
  EvalReport report;
  std::vector<StepMetrics> history;
  std::size_t audit_failures = 0;
  std::size_t consumed = 0;
};

ArmOutcome run_arm(const Arm& arm, const AblationOptions& o) {
  ArmOutcome out;
  TrainState state = init_train_state(arm.cfg, arm.options);
  if (arm.use_pipeline) {
    PipelineFeed feed(arm.cfg, o.seed, arm.annot);
    const BatchSource src = feed.source(arm.cfg.train.batch);
    out.history = train_loop(state, src, o.steps);
    // Audit at least a few hundred windows even for short runs.
    while (feed.consumed() < 256) src(0);
    out.audit_failures = feed.audit_failures();
    out.consumed = feed.consumed();
  } else {
    const auto data = make_dataset(static_cast<std::size_t>(o.n_clean), static_cast<std::size_t>(o.n_degraded),
                                   o.seed, arm.cfg);
    out.history = train_loop(state, dataset_source(data, arm.cfg.train.seed_data_order, arm.cfg.train.batch), o.steps);
  }
  out.report = evaluate(state.model, arm.cfg, o.eval_clips, mix_seed(o.seed, 0xE1), arm.shared_noise_sampler);
  return out;
}

// Max |delta| of video-branch parameters after one optimizer step on a
// ZETA-only batch at s = 0.7.
double low_noise_video_delta(const Config& cfg, bool mask) {
  Config c = cfg;
  c.train.grad_accum = 1;
  TrainOptions opt;
  opt.fixed_noise_level = 0.7;
  opt.mask_low_quality = mask;
  TrainState st = init_train_state(c, opt);
  const ParamMap before = st.model.params;
  std::vector<SampleTuple> batch;
  for (int i = 0; i < c.train.batch; ++i) {
    batch.push_back(degrade(gen_pair(mix_seed(7, static_cast<std::uint64_t>(i)), c.model, c.data), 9 + i,
                            c.data.degrade_sigma));
  }
  train_step(st, batch);
  double d = 0.0;
  for (const auto& [name, p] : st.model.params) {
    if (is_video_branch(name)) d = std::max(d, (p - before.at(name)).cwiseAbs().maxCoeff());
  }
  return d;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

AblationResult run_ablation(AblationName name, const Config& cfg_in, const AblationOptions& o) {
  const Config cfg = validate_config(cfg_in);
  AblationResult res;
  res.name = name;
  Arm control{cfg, {}, false, AnnotatorMode::kOnline, false};
  Arm treatment = control;
  switch (name) {
    case AblationName::kNoInss: {
      treatment.options.independent_noise = false;
      treatment.shared_noise_sampler = true;
      const NoiseCheck t = check_noise(true, o.seed), c = check_noise(false, o.seed);
      res.checks.push_back({"treatment fails shape robustness", !t.shape_robust,
                            t.shape_robust ? "audio noise unchanged" : "audio noise changed with video shape"});
      res.checks.push_back({"control passes shape robustness", c.shape_robust,
                            "max |corr| " + fmt(c.max_abs_corr)});
      break;
    }
    case AblationName::kNoLqls: {
      treatment.options.mask_low_quality = false;
      const double dt = low_noise_video_delta(cfg, false), dc = low_noise_video_delta(cfg, true);
      res.checks.push_back({"treatment moves video branch on low-noise ZETA", dt > 0.0, "max |delta| " + fmt(dt)});
      res.checks.push_back({"control leaves video branch fixed", dc == 0.0, "max |delta| " + fmt(dc)});
      break;
    }
    case AblationName::kNoSsl:
      treatment.cfg.model.lambda_ssl = 0.0;
      break;
    case AblationName::kOfflineAnnot:
      treatment.use_pipeline = control.use_pipeline = true;
      treatment.annot = AnnotatorMode::kOffline;
      break;
  }

  const ArmOutcome t = run_arm(treatment, o);
  const ArmOutcome c = run_arm(control, o);
  res.treatment = t.report;
  res.control = c.report;

  auto all_fm_finite = [](const std::vector<StepMetrics>& h) {
    return std::all_of(h.begin(), h.end(), [](const StepMetrics& m) { return std::isfinite(m.loss.fm()); });
  };
  if (name == AblationName::kNoSsl) {
    const bool absent = std::none_of(t.history.begin(), t.history.end(),
                                     [](const StepMetrics& m) { return m.loss.ssl.has_value(); });
    const bool present = std::all_of(c.history.begin(), c.history.end(),
                                     [](const StepMetrics& m) { return m.loss.ssl.has_value(); });
    res.checks.push_back({"treatment logs no l_ssl", absent, ""});
    res.checks.push_back({"control logs l_ssl", present, ""});
    res.checks.push_back({"treatment FM terms finite", all_fm_finite(t.history), ""});
  }
  if (name == AblationName::kOfflineAnnot) {
    const double tr = t.consumed ? static_cast<double>(t.audit_failures) / t.consumed : 0.0;
    const double cr = c.consumed ? static_cast<double>(c.audit_failures) / c.consumed : 0.0;
    res.checks.push_back({"offline annotator fails >= 20% of audits", t.consumed > 0 && tr >= 0.2,
                          fmt(100 * tr) + "% of " + std::to_string(t.consumed)});
    res.checks.push_back({"online annotator fails no audit", cr == 0.0,
                          fmt(100 * cr) + "% of " + std::to_string(c.consumed)});
  }
  res.checks.push_back({"both arms finite", all_fm_finite(t.history) && all_fm_finite(c.history), ""});
  return res;
}

}  // namespace avs
