// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "avs/core/error.hpp"
#include "avs/core/rng.hpp"
#include "avs/core/shard.hpp"
#include "avs/evalx/evalx.hpp"
#include "avs/pipeline/net.hpp"
#include "avs/synthdata/synthdata.hpp"
#include "json.hpp"

namespace avs {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file (defaults built in)");
  app->add_option("--seed", c.seed, "Derives every PRNG seed");
}

// Every stochastic component gets its own stream derived from --seed.
Config resolve_config(const Common& c) {
  Config cfg = c.config_path.empty() ? default_config() : load_config(c.config_path);
  if (c.seed) cfg = with_seed(cfg, *c.seed);
  return validate_config(cfg);
}

std::uint64_t data_seed(const Common& c) { return c.seed.value_or(0); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
}

// Reads step/l_video/l_mel/l_ssl columns of a metrics log.
std::vector<std::vector<double>> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
  std::vector<std::vector<double>> cols(3);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kv;
    double v[3] = {NAN, NAN, NAN};
    while (ls >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = kv.substr(0, eq);
      const double val = std::stod(kv.substr(eq + 1));
      if (key == "l_video") v[0] = val;
      if (key == "l_mel") v[1] = val;
      if (key == "l_ssl") v[2] = val;
    }
    for (int k = 0; k < 3; ++k) cols[static_cast<std::size_t>(k)].push_back(v[k]);
  }
  return cols;
}

void print_report(const EvalReport& r, std::ostream& os) {
  char buf[256];
  os << "metric                      value\n";
  std::snprintf(buf, sizeof buf, "av_alignment (|r|, higher)  %.4f\n", r.av_alignment);
  os << buf;
  std::snprintf(buf, sizeof buf, "av_alignment signed         %.4f\n", r.av_alignment_signed);
  os << buf;
  std::snprintf(buf, sizeof buf, "degenerate clips            %d / %d\n", r.degenerate_clips, r.clips);
  os << buf;
  std::snprintf(buf, sizeof buf, "fm_val_loss (lower)         %.4f\n", r.fm_val_loss);
  os << buf;
  std::snprintf(buf, sizeof buf, "noise max |corr|            %.4f\n", r.noise_max_abs_corr);
  os << buf;
  os << "noise shape robust          " << (r.noise_shape_robust ? "yes" : "no") << '\n';
  std::snprintf(buf, sizeof buf, "caption adherence           %.4f\n", r.caption_adherence);
  os << buf;
}

int cmd_gen_data(const Common& c, const std::string& out, std::size_t clean, std::size_t degraded) {
  const Config cfg = resolve_config(c);
  const DatasetInfo info = build_dataset(clean, degraded, data_seed(c), cfg, out);
  std::cout << "wrote " << info.n_theta << " THETA + " << info.n_zeta << " ZETA samples in " << info.shards.size()
            << " shard(s) to " << out << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, out, resume;
  std::optional<int> steps, checkpoint_every;
  std::optional<double> lambda_ssl;
  bool online = false, offline_annot = false, no_lqls = false, shared_noise = false, plot = false;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  Config cfg = resolve_config(c);
  if (a.lambda_ssl) cfg.model.lambda_ssl = *a.lambda_ssl;
  if (a.checkpoint_every) cfg.train.checkpoint_every = *a.checkpoint_every;
  TrainOptions opt;
  opt.mask_low_quality = !a.no_lqls;
  opt.independent_noise = !a.shared_noise;
  TrainState state = a.resume.empty() ? init_train_state(cfg, opt) : load_train_state(cfg, a.resume, opt);
  const int steps = a.steps.value_or(cfg.train.steps);
  LoopOptions lo;
  lo.out_dir = a.out;
  lo.checkpoint_every = cfg.train.checkpoint_every;
  std::vector<StepMetrics> history;
  if (a.online || a.offline_annot) {
    PipelineFeed feed(cfg, data_seed(c), a.offline_annot ? AnnotatorMode::kOffline : AnnotatorMode::kOnline);
    history = train_loop(state, feed.source(cfg.train.batch), steps, lo);
    std::cout << "pipeline: " << feed.consumed() << " windows consumed, " << feed.audit_failures()
              << " failed the caption audit\n";
  } else {
    const std::vector<SampleTuple> data =
        a.data.empty() ? make_dataset(192, 64, data_seed(c), cfg) : load_dataset(a.data);
    history = train_loop(state, dataset_source(data, cfg.train.seed_data_order, cfg.train.batch), steps, lo);
  }
  save_config(cfg, fs::path(a.out) / "config.json");
  if (!history.empty()) std::cout << "last: " << format_metrics(history.back()) << '\n';
  std::cout << "model written to " << (fs::path(a.out) / "model.avsh").string() << '\n';
  if (a.plot) {
    const auto cols = read_metrics(fs::path(a.out) / "metrics.log");
    write_text(fs::path(a.out) / "loss_curve.svg",
               svg_line_chart(cols, {"l_video", "l_mel", "l_ssl"}, "training losses"));
  }
  return 0;
}

struct SampleArgs {
  std::string model, out, schedule = "clean";
  int clips = 4;
  std::optional<int> steps;
  bool shared_noise = false;
};

int cmd_sample(const Common& c, const SampleArgs& a) {
  Config cfg = resolve_config(c);
  if (a.steps) cfg.sampler.steps = *a.steps;
  require(a.schedule == "clean" || a.schedule == "path", ErrorCode::kUsage, "--schedule must be clean or path");
  cfg.sampler.reference_schedule = a.schedule == "clean" ? ReferenceSchedule::kClean : ReferenceSchedule::kPath;
  const FusedModel model = load_model(cfg.model, a.model);
  const auto clips = generate_clips(model, cfg, a.clips, data_seed(c), a.shared_noise);
  fs::create_directories(a.out);
  std::vector<SampleTuple> out;
  std::ostringstream series;
  series << "# clip step frame height pitch\n";
  for (std::size_t i = 0; i < clips.size(); ++i) {
    SampleTuple s = clips[i].prompt;
    s.clip_id = static_cast<std::int64_t>(i);
    s.video = clips[i].video;
    s.audio = clips[i].audio;
    s.reference = s.video.frames(0, 1);
    out.push_back(s);
    const auto h = decode_height(s.video);
    const auto p = decode_pitch(s.audio);
    const std::size_t per = p.size() / std::max<std::size_t>(h.size(), 1);
    for (std::size_t k = 0; k < p.size(); ++k) {
      series << i << ' ' << k << ' ' << k / per << ' ' << h[k / per] << ' ' << p[k] << '\n';
    }
    std::cout << "clip " << i << " av_alignment " << av_alignment(s.video, s.audio).value << '\n';
  }
  write_shard(out, fs::path(a.out) / "samples.avsh");
  write_text(fs::path(a.out) / "series.txt", series.str());
  return 0;
}

struct EvalArgs {
  std::string model, out = "report.json", plot, metrics;
  int clips = 50;
  bool shared_noise = false;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  const Config cfg = resolve_config(c);
  const FusedModel model = load_model(cfg.model, a.model);
  const EvalReport r = evaluate(model, cfg, a.clips, data_seed(c), a.shared_noise);
  print_report(r, std::cout);
  write_text(a.out, report_to_json(r));
  if (!a.plot.empty()) {
    write_text(fs::path(a.plot) / "alignment_hist.svg",
               svg_histogram(r.per_clip, -1.0, 1.0, 20, "per-clip av_alignment"));
    if (!a.metrics.empty()) {
      write_text(fs::path(a.plot) / "loss_curve.svg",
                 svg_line_chart(read_metrics(a.metrics), {"l_video", "l_mel", "l_ssl"}, "training losses"));
    }
  }
  return 0;
}

int cmd_ablate(const Common& c, const std::string& name, const AblationOptions& o_in, const std::string& out) {
  const Config cfg = resolve_config(c);
  AblationOptions o = o_in;
  o.seed = data_seed(c);
  const AblationResult r = run_ablation(parse_ablation(name), cfg, o);
  std::cout << "ablation " << to_string(r.name) << "\n-- treatment\n";
  print_report(r.treatment, std::cout);
  std::cout << "-- control\n";
  print_report(r.control, std::cout);
  bool ok = true;
  nlohmann::json checks = nlohmann::json::array();
  for (const AblationCheck& k : r.checks) {
    std::cout << (k.passed ? "PASS " : "FAIL ") << k.name << (k.detail.empty() ? "" : " (" + k.detail + ")") << '\n';
    ok = ok && k.passed;
    checks.push_back({{"name", k.name}, {"passed", k.passed}, {"detail", k.detail}});
  }
  if (!out.empty()) {
    nlohmann::json j;
    j["ablation"] = to_string(r.name);
    j["treatment"] = nlohmann::json::parse(report_to_json(r.treatment));
    j["control"] = nlohmann::json::parse(report_to_json(r.control));
    j["checks"] = checks;
    write_text(out, j.dump(2));
  }
  return ok ? 0 : 1;
}

int cmd_noise_demo(const Common& c) {
  const std::uint64_t seed = data_seed(c);
  const MelShape a{4, 64, 8};
  const VideoShape shapes[] = {{8, 4, 8, 8}, {8, 8, 8, 8}, {8, 16, 4, 4}};
  std::cout << "sampler      video_shape   audio_noise[0..3]                         same_as_first\n";
  for (bool shared : {false, true}) {
    std::optional<MelLatent> first;
    for (const VideoShape& v : shapes) {
      const NoisePair p = shared ? shared_stream_noise(v, a, mix_seed(seed, 1))
                                 : sample_noise_pair(v, a, mix_seed(seed, 1), mix_seed(seed, 2));
      if (!first) first = p.eps_audio;
      char buf[256];
      const auto d = p.eps_audio.data();
      std::snprintf(buf, sizeof buf, "%-12s (%d,%d,%d,%d)%*s %+.5f %+.5f %+.5f %+.5f   %s\n",
                    shared ? "shared" : "independent", v.channels, v.frames, v.height, v.width,
                    v.frames >= 10 ? 1 : 2, "", d[0], d[1], d[2], d[3], p.eps_audio == *first ? "yes" : "no");
      std::cout << buf;
    }
  }
  for (bool shared : {false, true}) {
    const NoiseCheck nc = check_noise(shared, seed);
    std::printf("%-12s max |corr| over 4096 paired draws: %.4f (bound %.4f), shape robust: %s\n",
                shared ? "shared" : "independent", nc.max_abs_corr, 4.0 / 64.0, nc.shape_robust ? "yes" : "no");
  }
  std::fflush(stdout);
  return 0;
}

struct PipelineArgs {
  std::size_t items = 1000;
  std::optional<int> capacity;
  bool offline = false, socket = false;
};

int cmd_pipeline_demo(const Common& c, const PipelineArgs& a) {
  Config cfg = resolve_config(c);
  if (a.capacity) cfg.pipeline.capacity = *a.capacity;
  const SourceStore store(cfg, data_seed(c));
  BoundedBuffer buffer(static_cast<std::size_t>(cfg.pipeline.capacity));
  ProducerOptions opt;
  opt.mode = a.offline ? AnnotatorMode::kOffline : AnnotatorMode::kOnline;
  const std::size_t batch = std::min<std::size_t>(8, buffer.capacity());
  const std::size_t items = a.items - a.items % batch;

  std::optional<BufferServer> server;
  pid_t child = -1;
  std::thread local;
  if (a.socket) {
    server.emplace(buffer);
    std::cout.flush();
    child = ::fork();
    require(child >= 0, ErrorCode::kIo, "fork failed");
    if (child == 0) {
      int code = 0;
      try {
        RemoteBuffer remote(server->port());
        producer_run(store, remote, items, data_seed(c), opt);
      } catch (const Error&) {
        code = 3;
      }
      ::_exit(code);
    }
  } else {
    local = std::thread([&] {
      try {
        producer_run(store, buffer, items, data_seed(c), opt);
      } catch (const Error&) {
      }
    });
  }
  std::size_t consumed = 0, failures = 0;
  while (consumed < items) {
    const ConsumedBatch got = consume_batch(buffer, batch, std::chrono::seconds(30), cfg.data);
    consumed += got.samples.size();
    failures += got.audit_failures;
  }
  const auto t0 = std::chrono::steady_clock::now();
  buffer.cancel();
  if (local.joinable()) local.join();
  if (child > 0) {
    int status = 0;
    ::waitpid(child, &status, 0);
  }
  if (server) server->stop();
  const double shutdown_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::printf("mode %s, transport %s\n", a.offline ? "offline" : "online", a.socket ? "loopback socket" : "in-process");
  std::printf("consumed %zu of %zu, watermark %zu / %zu, blocked puts %llu\n", consumed, items, buffer.watermark(),
              buffer.capacity(), static_cast<unsigned long long>(buffer.blocked_puts()));
  std::printf("audit failures %zu (%.1f%%), shutdown %.1f ms\n", failures,
              consumed ? 100.0 * static_cast<double>(failures) / static_cast<double>(consumed) : 0.0, shutdown_ms);
  std::fflush(stdout);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"avstitch: stitched audio-video flow-matching toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as shards");
  std::string gen_out;
  std::size_t n_clean = 64, n_degraded = 64;
  add_common(gen, common);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--clean", n_clean, "THETA (clean) samples");
  gen->add_option("--degraded", n_degraded, "ZETA (degraded) samples");

  auto* train = app.add_subcommand("train", "Train the fused model");
  TrainArgs ta;
  add_common(train, common);
  train->add_option("--data", ta.data, "Dataset directory from gen-data (default: generated in memory)");
  train->add_option("--out", ta.out, "Run directory")->required();
  train->add_option("--steps", ta.steps, "Micro-batch steps (default from config)");
  train->add_option("--resume", ta.resume, "Resume from a state-*.avsh checkpoint");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint period in steps");
  train->add_option("--lambda-ssl", ta.lambda_ssl, "SSL loss weight");
  train->add_flag("--online", ta.online, "Consume batches from the annotation pipeline");
  train->add_flag("--offline-annot", ta.offline_annot, "Pipeline with the misaligned whole-recording annotator");
  train->add_flag("--no-lqls", ta.no_lqls, "Disable the low-quality video loss mask");
  train->add_flag("--shared-noise", ta.shared_noise, "Draw both noises from one stream");
  train->add_flag("--plot", ta.plot, "Write loss_curve.svg into the run directory");

  auto* sample = app.add_subcommand("sample", "Generate clips with a trained model");
  SampleArgs sa;
  add_common(sample, common);
  sample->add_option("--model", sa.model, "model.avsh")->required();
  sample->add_option("--out", sa.out, "Output directory")->required();
  sample->add_option("--clips", sa.clips, "Number of clips");
  sample->add_option("--steps", sa.steps, "Euler steps");
  sample->add_option("--schedule", sa.schedule, "Reference schedule: clean or path");
  sample->add_flag("--shared-noise", sa.shared_noise, "Draw both noises from one stream");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained model");
  EvalArgs ea;
  add_common(eval, common);
  eval->add_option("--model", ea.model, "model.avsh")->required();
  eval->add_option("--out", ea.out, "Report JSON path");
  eval->add_option("--clips", ea.clips, "Generated clips");
  eval->add_option("--plot", ea.plot, "Directory for SVG plots");
  eval->add_option("--metrics", ea.metrics, "metrics.log to plot as a loss curve");
  eval->add_flag("--shared-noise", ea.shared_noise, "Sample with one noise stream");

  auto* ablate = app.add_subcommand("ablate", "Run one ablation (treatment vs control)");
  std::string ab_name, ab_out;
  AblationOptions ao;
  add_common(ablate, common);
  ablate->add_option("--name", ab_name, "NO_INSS, NO_LQLS, NO_SSL or OFFLINE_ANNOT")->required();
  ablate->add_option("--steps", ao.steps, "Training steps per arm");
  ablate->add_option("--clips", ao.eval_clips, "Evaluation clips per arm");
  ablate->add_option("--out", ab_out, "JSON result path");

  auto* conf = app.add_subcommand("config", "Print a configuration preset as JSON");
  std::string preset = "default";
  conf->add_option("--preset", preset, "default or paper_scale")->check(CLI::IsMember({"default", "paper_scale"}));
  add_common(conf, common);

  auto* noise = app.add_subcommand("noise-demo", "Compare independent and shared-stream noise");
  add_common(noise, common);

  auto* pipe = app.add_subcommand("pipeline-demo", "Run the producer/consumer pipeline");
  PipelineArgs pa;
  add_common(pipe, common);
  pipe->add_option("--items", pa.items, "Windows to produce");
  pipe->add_option("--capacity", pa.capacity, "Buffer capacity");
  pipe->add_flag("--offline", pa.offline, "Misaligned whole-recording annotator");
  pipe->add_flag("--socket", pa.socket, "Producer in a child process over loopback");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "USAGE: " << e.what() << "\n" << app.help();
    return 2;
  }
  try {
    if (gen->parsed()) return cmd_gen_data(common, gen_out, n_clean, n_degraded);
    if (train->parsed()) return cmd_train(common, ta);
    if (sample->parsed()) return cmd_sample(common, sa);
    if (eval->parsed()) return cmd_eval(common, ea);
    if (ablate->parsed()) return cmd_ablate(common, ab_name, ao, ab_out);
    if (noise->parsed()) return cmd_noise_demo(common);
    if (conf->parsed()) {
      Config cfg = preset == "paper_scale" ? paper_scale_config() : resolve_config(common);
      if (common.seed) cfg = with_seed(cfg, *common.seed);
      std::cout << config_to_json(cfg) << '\n';
      return 0;
    }
    if (pipe->parsed()) return cmd_pipeline_demo(common, pa);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::kUsage ? 2 : 1;
  }
  return 2;
}

}  // namespace avs
