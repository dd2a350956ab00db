// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "avs/pipeline/pipeline.hpp"

namespace avs {

// Loopback transport for the buffer. Every message is
//   u32 length (bytes that follow), u8 op, payload
// with little-endian integers. Requests: PUT(entry), TAKE(u32 count,
// u32 timeout_ms). Replies: ACK(u64 stamp), BATCH(u32 n, n x (u32 len,
// entry)), TIMEOUT, SHUTDOWN, ERROR(text).
enum class WireOp : std::uint8_t {
  kPut = 1,
  kTake = 2,
  kAck = 3,
  kBatch = 4,
  kTimeout = 5,
  kShutdown = 6,
  kError = 7,
};

std::vector<std::uint8_t> encode_entry(const BufferEntry& entry);
/// Throws CORRUPT on malformed input.
BufferEntry decode_entry(std::span<const std::uint8_t> bytes);

/// Serves a BoundedBuffer on 127.0.0.1. One thread per connection.
class BufferServer {
 public:
  /// port 0 picks a free port.
  explicit BufferServer(BoundedBuffer& buffer, std::uint16_t port = 0);
  ~BufferServer();
  BufferServer(const BufferServer&) = delete;
  BufferServer& operator=(const BufferServer&) = delete;

  std::uint16_t port() const { return port_; }
  /// Closes the listener and every connection and joins the threads. Cancel
  /// the buffer first if a remote producer may be blocked on a full buffer.
  void stop();

 private:
  void accept_loop();
  void serve(int fd);

  BoundedBuffer& buffer_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<int> clients_;
  std::vector<std::thread> workers_;
};

/// Client side: looks like a local buffer.
class RemoteBuffer : public EntrySink {
 public:
  explicit RemoteBuffer(std::uint16_t port);
  ~RemoteBuffer() override;
  RemoteBuffer(const RemoteBuffer&) = delete;
  RemoteBuffer& operator=(const RemoteBuffer&) = delete;

  /// Throws SHUTDOWN when the server-side buffer is cancelled, IO when the
  /// connection fails.
  std::uint64_t put(BufferEntry entry) override;
  std::optional<std::vector<BufferEntry>> take(std::size_t count, std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
};

}  // namespace avs
