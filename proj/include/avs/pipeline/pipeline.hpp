// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <vector>

#include "avs/core/config.hpp"
#include "avs/core/types.hpp"
#include "avs/synthdata/synthdata.hpp"

namespace avs {

struct BufferEntry {
  SampleTuple sample;
  std::uint64_t produced_at = 0;  // assigned by the buffer on insertion
  int annotator_id = 0;
};

/// Where a producer delivers entries.
class EntrySink {
 public:
  virtual ~EntrySink() = default;
  /// Blocks while the destination is full; returns the produced_at stamp.
  virtual std::uint64_t put(BufferEntry entry) = 0;
};

/// Bounded FIFO with blocking put/get and cancellation. Safe for several
/// producers and one consumer.
class BoundedBuffer : public EntrySink {
 public:
  explicit BoundedBuffer(std::size_t capacity);

  /// Blocks while full. Throws SHUTDOWN once cancelled (the entry is not
  /// inserted).
  std::uint64_t put(BufferEntry entry) override;

  /// Waits up to `timeout` for `count` entries and removes them all at once,
  /// in FIFO order. Returns nullopt on timeout (nothing removed). Throws
  /// SHUTDOWN if cancelled before enough entries arrive and RANGE if count
  /// exceeds capacity.
  std::optional<std::vector<BufferEntry>> take(std::size_t count, std::chrono::milliseconds timeout);

  /// Wakes every waiter; subsequent put/take throw SHUTDOWN.
  void cancel();
  bool cancelled() const;

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  /// Highest occupancy ever observed.
  std::size_t watermark() const;
  /// Number of put calls that had to wait for space.
  std::uint64_t blocked_puts() const;

 private:
  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<BufferEntry> items_;
  std::uint64_t next_stamp_ = 0;
  std::size_t watermark_ = 0;
  std::uint64_t blocked_puts_ = 0;
  bool cancelled_ = false;
};

/// Long synthetic recordings to cut windows from.
struct Source {
  int id = 0;
  VideoLatent video;
  MelLatent audio;
};

class SourceStore {
 public:
  /// num_sources recordings of source_frames frames each, from `seed`.
  SourceStore(const Config& cfg, std::uint64_t seed);

  const Source& source(int id) const;
  int size() const { return static_cast<int>(sources_.size()); }
  int frames() const { return frames_; }
  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  int frames_ = 0;
  std::vector<Source> sources_;
};

struct RawClip {
  int source_id = 0;
  int offset = 0;
  VideoLatent video;
  MelLatent audio;
};

/// Frames [offset, offset + length) and the co-located audio steps.
/// Throws BOUNDS when the window does not fit and RATIO when the audio span
/// is not a whole number of steps.
RawClip sample_window(const Source& source, int offset, int length, const Rational& ratio);

enum class AnnotatorMode {
  kOnline,   // captions describe the window itself
  kOffline,  // captions describe the whole recording (misaligned)
};

Captions annotate(const RawClip& clip, const DataConfig& data);
Captions annotate(const RawClip& clip, const SourceStore& store, AnnotatorMode mode);

/// Re-derives the captions from the stored latents and compares.
bool audit_sample(const SampleTuple& sample, const DataConfig& data);

struct ProducerOptions {
  AnnotatorMode mode = AnnotatorMode::kOnline;
  int annotator_id = 0;
  /// Called after each successful put with the entry's clip id.
  std::function<void(std::int64_t)> on_produced;
};

/// Samples n_items random windows, annotates them and puts them into the
/// buffer (blocking when full). Clip ids are (annotator_id << 32) | index.
/// Throws SHUTDOWN when the buffer is cancelled.
std::size_t producer_run(const SourceStore& store, EntrySink& buffer, std::size_t n_items, std::uint64_t seed,
                         const ProducerOptions& options = {});

struct ConsumedBatch {
  std::vector<SampleTuple> samples;
  std::vector<std::uint64_t> produced_at;
  std::vector<int> annotator_ids;
  std::size_t audit_failures = 0;
};

/// Takes exactly batch_size entries in production order and audits each
/// against its clip content. Throws TIMEOUT when they do not arrive in time.
ConsumedBatch consume_batch(BoundedBuffer& buffer, std::size_t batch_size, std::chrono::milliseconds timeout,
                            const DataConfig& data);

}  // namespace avs
