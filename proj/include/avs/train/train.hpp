// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/core/types.hpp"
#include "avs/fm/fm.hpp"
#include "avs/soe/soe.hpp"

namespace avs {

/// Switches used by the ablations; defaults are the full method.
struct TrainOptions {
  bool mask_low_quality = true;   // video loss on ZETA only when s > tau
  bool independent_noise = true;  // per-modality PRNG instances
  /// Forces every sample's noise level (tests and probes).
  std::optional<double> fixed_noise_level;
};

struct AdamWState {
  ParamMap m;
  ParamMap v;
  std::int64_t t = 0;
};

struct LossTerms {
  double video = 0.0;
  double mel = 0.0;
  std::optional<double> ssl;  // absent when lambda_ssl == 0

  double fm() const { return video + mel; }
};

struct TrainState {
  Config cfg;
  TrainOptions options;
  FusedModel model;
  AdamWState opt;
  ParamMap grad_sum;
  int accum = 0;
  std::int64_t step = 0;
  LossTerms ema;
  bool ema_started = false;
  TeacherMaps teachers;
};

/// Builds the fused model from cfg.train.seed_init. Throws SAME_SEED when the
/// two noise seeds coincide.
TrainState init_train_state(const Config& cfg, const TrainOptions& options = {});

struct StepMetrics {
  std::int64_t step = 0;  // 1-based index of the step just taken
  LossTerms loss;         // batch means
  bool updated = false;   // optimizer applied on this step
  double mean_noise_level = 0.0;
  double seconds = 0.0;
};

/// Everything one sample contributes, ready for the forward pass.
struct PreparedSample {
  double noise_level = 0.0;
  nn::Matrix video_xt;  // first frame already replaced by the reference
  nn::Matrix audio_xt;
  nn::Matrix video_target;
  nn::Matrix audio_target;
  Captions32 captions;
  SubsetTag subset = SubsetTag::kTheta;
  TeacherFeatures teachers;
  NoisePair noise;
};

PreparedSample prepare_sample(const TrainState& state, const SampleTuple& sample, std::int64_t step, int index);

struct SampleLossVars {
  nn::Var video, mel, ssl, total;
  bool video_active = false;
};

/// Loss assembly from model outputs; `tap` and `heads` may be left invalid
/// when lambda_ssl == 0.
SampleLossVars sample_losses(const TrainState& state, const PreparedSample& prep, nn::Var video_pred,
                             nn::Var audio_pred, nn::Var tap, const SslHeads& heads);

/// One micro-batch. Throws NONFINITE (state untouched) if any loss is NaN/Inf.
StepMetrics train_step(TrainState& state, std::span<const SampleTuple> batch);

/// AdamW update from state.grad_sum / grad_accum; clears the accumulator.
void apply_optimizer(TrainState& state);

void save_train_state(const TrainState& state, const std::filesystem::path& path);
/// Restores a state written by save_train_state; `cfg` must match its shapes.
TrainState load_train_state(const Config& cfg, const std::filesystem::path& path, const TrainOptions& options = {});

/// Deterministic batches: step k takes consecutive positions of a per-epoch
/// shuffle, so any step can be regenerated without history.
using BatchSource = std::function<std::vector<SampleTuple>(std::int64_t step)>;
BatchSource dataset_source(std::vector<SampleTuple> dataset, std::uint64_t seed, int batch);

struct LoopOptions {
  std::filesystem::path out_dir;  // empty: no files
  int checkpoint_every = 0;       // 0: only the final checkpoint
  std::ostream* log = nullptr;    // metrics lines are also appended here
};

std::string format_metrics(const StepMetrics& m);

/// Runs `steps` further steps from the current state. Writes metrics.log,
/// state-<step>.avsh checkpoints and model.avsh when out_dir is set.
std::vector<StepMetrics> train_loop(TrainState& state, const BatchSource& source, int steps,
                                    const LoopOptions& options = {});

/// Parameter groups used by the isolation checks.
bool is_video_branch(const std::string& name);
bool is_audio_branch(const std::string& name);

}  // namespace avs
