// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/pipeline/pipeline.hpp"

#include "avs/core/error.hpp"
#include "avs/core/rng.hpp"

namespace avs {

BoundedBuffer::BoundedBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity >= 1, ErrorCode::kRange, "buffer capacity must be >= 1");
}

std::uint64_t BoundedBuffer::put(BufferEntry entry) {
  std::unique_lock lock(mu_);
  if (!cancelled_ && items_.size() >= capacity_) {
    ++blocked_puts_;
    not_full_.wait(lock, [&] { return cancelled_ || items_.size() < capacity_; });
  }
  if (cancelled_) fail(ErrorCode::kShutdown, "buffer cancelled");
  entry.produced_at = next_stamp_++;
  const std::uint64_t stamp = entry.produced_at;
  items_.push_back(std::move(entry));
  watermark_ = std::max(watermark_, items_.size());
  lock.unlock();
  not_empty_.notify_one();
  return stamp;
}

std::optional<std::vector<BufferEntry>> BoundedBuffer::take(std::size_t count, std::chrono::milliseconds timeout) {
  require(count >= 1, ErrorCode::kRange, "take count must be >= 1");
  require(count <= capacity_, ErrorCode::kRange, "take count exceeds buffer capacity");
  std::unique_lock lock(mu_);
  const bool ready = not_empty_.wait_for(lock, timeout, [&] { return cancelled_ || items_.size() >= count; });
  if (cancelled_) fail(ErrorCode::kShutdown, "buffer cancelled");
  if (!ready) return std::nullopt;
  std::vector<BufferEntry> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(std::move(items_.front()));
    items_.pop_front();
  }
  lock.unlock();
  not_full_.notify_all();
  return out;
}

void BoundedBuffer::cancel() {
  {
    std::lock_guard lock(mu_);
    cancelled_ = true;
  }
  not_full_.notify_all();
  not_empty_.notify_all();
}

bool BoundedBuffer::cancelled() const {
  std::lock_guard lock(mu_);
  return cancelled_;
}

std::size_t BoundedBuffer::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::size_t BoundedBuffer::watermark() const {
  std::lock_guard lock(mu_);
  return watermark_;
}

std::uint64_t BoundedBuffer::blocked_puts() const {
  std::lock_guard lock(mu_);
  return blocked_puts_;
}

SourceStore::SourceStore(const Config& cfg, std::uint64_t seed) : cfg_(cfg), frames_(cfg.pipeline.source_frames) {
  require(cfg.pipeline.num_sources >= 1, ErrorCode::kRange, "num_sources must be >= 1");
  require(frames_ >= cfg.model.video_grid.frames, ErrorCode::kRange, "sources shorter than one clip");
  const Rational& r = cfg.model.temporal_ratio;
  require((static_cast<std::int64_t>(frames_) * r.num) % r.den == 0, ErrorCode::kRatio,
          "source length is not a whole number of audio steps");
  VideoShape vs = cfg.model.video_grid;
  vs.frames = frames_;
  MelShape as = cfg.model.audio_grid;
  as.time = static_cast<int>(static_cast<std::int64_t>(frames_) * r.num / r.den);
  for (int id = 0; id < cfg.pipeline.num_sources; ++id) {
    RandomStream rng(mix_seed(seed, static_cast<std::uint64_t>(id), 0x50C));
    const BallWorld ball = random_ball(rng, cfg.data, vs.height);
    Source s{id, render_video(ball_trajectory(ball, frames_), vs, cfg.data.blob_sigma), MelLatent(as)};
    s.audio = render_audio(decode_heights(s.video), as, r);
    sources_.push_back(std::move(s));
  }
}

const Source& SourceStore::source(int id) const {
  require(id >= 0 && id < size(), ErrorCode::kBounds, "no source with id " + std::to_string(id));
  return sources_[static_cast<std::size_t>(id)];
}

RawClip sample_window(const Source& source, int offset, int length, const Rational& ratio) {
  const int total = source.video.shape().frames;
  require(offset >= 0 && length >= 1 && offset + length <= total, ErrorCode::kBounds,
          "window [" + std::to_string(offset) + ", " + std::to_string(offset + length) + ") outside source of " +
              std::to_string(total) + " frames");
  require((static_cast<std::int64_t>(offset) * ratio.num) % ratio.den == 0 &&
              (static_cast<std::int64_t>(length) * ratio.num) % ratio.den == 0,
          ErrorCode::kRatio, "window does not cover whole audio steps");
  const auto a_first = static_cast<int>(static_cast<std::int64_t>(offset) * ratio.num / ratio.den);
  const auto a_len = static_cast<int>(static_cast<std::int64_t>(length) * ratio.num / ratio.den);
  return {source.id, offset, source.video.frames(offset, length), source.audio.steps(a_first, a_len)};
}

Captions annotate(const RawClip& clip, const DataConfig& data) {
  return captions_for(classify_clip(clip.video, clip.audio, data));
}

Captions annotate(const RawClip& clip, const SourceStore& store, AnnotatorMode mode) {
  if (mode == AnnotatorMode::kOnline) return annotate(clip, store.config().data);
  const Source& whole = store.source(clip.source_id);
  return captions_for(classify_clip(whole.video, whole.audio, store.config().data));
}

bool audit_sample(const SampleTuple& sample, const DataConfig& data) {
  const Captions c = captions_for(classify_clip(sample.video, sample.audio, data));
  return c.video == sample.video_caption && c.audio == sample.audio_caption && c.speech == sample.speech;
}

std::size_t producer_run(const SourceStore& store, EntrySink& buffer, std::size_t n_items, std::uint64_t seed,
                         const ProducerOptions& options) {
  const Config& cfg = store.config();
  const int length = cfg.model.video_grid.frames;
  const int offsets = store.frames() - length + 1;
  RandomStream rng(mix_seed(seed, static_cast<std::uint64_t>(options.annotator_id), 0x9D0));
  for (std::size_t i = 0; i < n_items; ++i) {
    const int id = static_cast<int>(rng.below(static_cast<std::uint64_t>(store.size())));
    // Keep audio windows aligned to whole steps.
    int offset = static_cast<int>(rng.below(static_cast<std::uint64_t>(offsets)));
    const Rational& r = cfg.model.temporal_ratio;
    while ((static_cast<std::int64_t>(offset) * r.num) % r.den != 0) --offset;
    RawClip clip = sample_window(store.source(id), offset, length, r);
    const Captions caps = annotate(clip, store, options.mode);

    BufferEntry e;
    e.annotator_id = options.annotator_id;
    e.sample.clip_id = (static_cast<std::int64_t>(options.annotator_id) << 32) | static_cast<std::int64_t>(i);
    e.sample.subset = SubsetTag::kTheta;
    e.sample.reference = clip.video.frames(0, 1);
    e.sample.video = std::move(clip.video);
    e.sample.audio = std::move(clip.audio);
    e.sample.video_caption = caps.video;
    e.sample.audio_caption = caps.audio;
    e.sample.speech = caps.speech;
    const std::int64_t clip_id = e.sample.clip_id;
    buffer.put(std::move(e));
    if (options.on_produced) options.on_produced(clip_id);
  }
  return n_items;
}

ConsumedBatch consume_batch(BoundedBuffer& buffer, std::size_t batch_size, std::chrono::milliseconds timeout,
                            const DataConfig& data) {
  require(batch_size >= 1, ErrorCode::kRange, "batch_size must be >= 1");
  std::optional<std::vector<BufferEntry>> got = buffer.take(batch_size, timeout);
  if (!got) fail(ErrorCode::kTimeout, "no batch of " + std::to_string(batch_size) + " within timeout");
  ConsumedBatch out;
  for (BufferEntry& e : *got) {
    if (!audit_sample(e.sample, data)) ++out.audit_failures;
    out.produced_at.push_back(e.produced_at);
    out.annotator_ids.push_back(e.annotator_id);
    out.samples.push_back(std::move(e.sample));
  }
  return out;
}

}  // namespace avs
