// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/core/types.hpp"
#include "avs/infer/infer.hpp"
#include "avs/pipeline/pipeline.hpp"
#include "avs/soe/soe.hpp"
#include "avs/train/train.hpp"

namespace avs {

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct Alignment {
  double value = 0.0;  // Pearson r in [-1, 1]; 0 when degenerate
  bool degenerate = false;
};

/// Correlates each audio step's decoded pitch bin with the pitch bin its
/// video frame's decoded height maps to. Throws RATIO when the audio length
/// is not a whole multiple of the frame count.
Alignment av_alignment(const VideoLatent& video, const MelLatent& audio);

/// One generated clip and what it was asked for.
struct GeneratedClip {
  SampleTuple prompt;  // source of reference frame and captions
  VideoLatent video;
  MelLatent audio;
};

/// Generates n clips conditioned on held-out pairs (pair seeds and sampler
/// seeds derived from `seed`).
std::vector<GeneratedClip> generate_clips(const FusedModel& model, const Config& cfg, int n, std::uint64_t seed,
                                          bool shared_noise = false);

struct PermutationResult {
  double observed = 0.0;      // mean signed r of matched pairs
  double null_mean_abs = 0.0; // mean |r| over shuffled pairings
  double null_mean = 0.0;     // mean signed r over shuffled pairings
  double p_value = 1.0;       // one-sided, (1 + #{null >= observed}) / (1 + n)
};

/// Shuffled-pair null for matched (video, audio) lists. Each permutation
/// re-pairs every video with another clip's audio (derangement).
PermutationResult alignment_permutation_test(const std::vector<VideoLatent>& videos,
                                             const std::vector<MelLatent>& audios, int permutations,
                                             std::uint64_t seed);

struct EvalReport {
  double av_alignment = 0.0;         // mean |r| over clips (higher is better)
  double av_alignment_signed = 0.0;  // mean r
  int degenerate_clips = 0;
  int clips = 0;
  double fm_val_loss = 0.0;
  double noise_max_abs_corr = 0.0;
  bool noise_shape_robust = false;
  double caption_adherence = 0.0;
  std::vector<double> per_clip;

  bool operator==(const EvalReport&) const = default;
};

std::string report_to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);

/// Fraction of clips whose decoded pitch trend class equals the prompted one.
double caption_adherence(const std::vector<GeneratedClip>& clips, const DataConfig& data);

/// Mean (video + mel) flow-matching loss on held-out pairs at a fixed grid of
/// noise levels, no masking.
double fm_validation_loss(const FusedModel& model, const Config& cfg, int pairs, std::uint64_t seed);

struct NoiseCheck {
  double max_abs_corr = 0.0;  // over several seeds, 4096 paired draws each
  bool shape_robust = false;  // audio noise unchanged when video frames change
};
NoiseCheck check_noise(bool shared_noise, std::uint64_t seed);

EvalReport evaluate(const FusedModel& model, const Config& cfg, int clips, std::uint64_t seed,
                    bool shared_noise = false);

/// Producer thread feeding a buffer from a SourceStore; batches come out in
/// production order (deterministic for a single producer).
class PipelineFeed {
 public:
  PipelineFeed(const Config& cfg, std::uint64_t seed, AnnotatorMode mode);
  ~PipelineFeed();
  PipelineFeed(const PipelineFeed&) = delete;
  PipelineFeed& operator=(const PipelineFeed&) = delete;

  BatchSource source(int batch);
  std::size_t audit_failures() const { return *audit_failures_; }
  std::size_t consumed() const { return *consumed_; }

 private:
  Config cfg_;
  std::unique_ptr<SourceStore> store_;
  std::unique_ptr<BoundedBuffer> buffer_;
  std::shared_ptr<std::size_t> audit_failures_ = std::make_shared<std::size_t>(0);
  std::shared_ptr<std::size_t> consumed_ = std::make_shared<std::size_t>(0);
  std::thread producer_;
};

enum class AblationName { kNoInss, kNoLqls, kNoSsl, kOfflineAnnot };
AblationName parse_ablation(const std::string& name);
std::string to_string(AblationName name);

struct AblationCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct AblationResult {
  AblationName name{};
  EvalReport treatment;
  EvalReport control;
  std::vector<AblationCheck> checks;
};

struct AblationOptions {
  int steps = 200;
  int n_clean = 192;
  int n_degraded = 64;
  int eval_clips = 20;
  std::uint64_t seed = 1;
};

AblationResult run_ablation(AblationName name, const Config& cfg, const AblationOptions& options = {});

/// Minimal SVG charts.
std::string svg_line_chart(const std::vector<std::vector<double>>& series, const std::vector<std::string>& labels,
                           const std::string& title);
std::string svg_histogram(const std::vector<double>& values, double lo, double hi, int bins,
                          const std::string& title);

/// Command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace avs
