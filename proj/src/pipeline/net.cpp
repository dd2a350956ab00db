// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/pipeline/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>

#include "avs/core/error.hpp"

namespace avs {

namespace {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_floats(std::span<const float> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size_bytes());
  }
  void put_tokens(const TokenSeq32& t) {
    put(static_cast<std::uint32_t>(t.size()));
    for (std::int32_t id : t) put(id);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_floats(std::span<float> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), b_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  TokenSeq32 get_tokens() {
    const auto n = get<std::uint32_t>();
    need(static_cast<std::size_t>(n) * 4);
    TokenSeq32 t(n);
    for (auto& id : t) id = get<std::int32_t>();
    return t;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= b_.size(), ErrorCode::kCorrupt, "truncated wire message");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_video(Writer& w, const VideoLatent& v) {
  const VideoShape& s = v.shape();
  for (int d : {s.channels, s.frames, s.height, s.width}) w.put(static_cast<std::int32_t>(d));
  w.put_floats(v.data());
}

VideoLatent read_video(Reader& r) {
  VideoShape s;
  s.channels = r.get<std::int32_t>();
  s.frames = r.get<std::int32_t>();
  s.height = r.get<std::int32_t>();
  s.width = r.get<std::int32_t>();
  require(s.channels >= 0 && s.frames >= 0 && s.height >= 0 && s.width >= 0 && s.numel() < (1 << 26),
          ErrorCode::kCorrupt, "bad video shape on the wire");
  VideoLatent v(s);
  r.get_floats(v.data());
  return v;
}

void write_mel(Writer& w, const MelLatent& m) {
  const MelShape& s = m.shape();
  for (int d : {s.channels, s.time, s.freq}) w.put(static_cast<std::int32_t>(d));
  w.put_floats(m.data());
}

MelLatent read_mel(Reader& r) {
  MelShape s;
  s.channels = r.get<std::int32_t>();
  s.time = r.get<std::int32_t>();
  s.freq = r.get<std::int32_t>();
  require(s.channels >= 0 && s.time >= 0 && s.freq >= 0 && s.numel() < (1 << 26), ErrorCode::kCorrupt,
          "bad mel shape on the wire");
  MelLatent m(s);
  r.get_floats(m.data());
  return m;
}

void send_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
    if (k < 0 && errno == EINTR) continue;
    require(k > 0, ErrorCode::kIo, std::string("socket send failed: ") + std::strerror(errno));
    p += k;
    n -= static_cast<std::size_t>(k);
  }
}

// False on orderly close before the first byte.
bool recv_all(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t k = ::recv(fd, p + got, n - got, 0);
    if (k < 0 && errno == EINTR) continue;
    if (k == 0 && got == 0) return false;
    require(k > 0, ErrorCode::kIo, "connection closed mid-message");
    got += static_cast<std::size_t>(k);
  }
  return true;
}

void send_message(int fd, WireOp op, std::span<const std::uint8_t> payload) {
  Writer w;
  w.put(static_cast<std::uint32_t>(payload.size() + 1));
  w.put(static_cast<std::uint8_t>(op));
  w.bytes.insert(w.bytes.end(), payload.begin(), payload.end());
  send_all(fd, w.bytes.data(), w.bytes.size());
}

struct Message {
  WireOp op;
  std::vector<std::uint8_t> payload;
};

std::optional<Message> recv_message(int fd) {
  std::uint32_t len = 0;
  if (!recv_all(fd, reinterpret_cast<std::uint8_t*>(&len), sizeof len)) return std::nullopt;
  require(len >= 1 && len < (1u << 30), ErrorCode::kCorrupt, "bad wire message length");
  std::vector<std::uint8_t> body(len);
  require(recv_all(fd, body.data(), len), ErrorCode::kIo, "connection closed mid-message");
  return Message{static_cast<WireOp>(body[0]), std::vector<std::uint8_t>(body.begin() + 1, body.end())};
}

}  // namespace

std::vector<std::uint8_t> encode_entry(const BufferEntry& e) {
  Writer w;
  w.put(e.produced_at);
  w.put(static_cast<std::int32_t>(e.annotator_id));
  w.put(e.sample.clip_id);
  w.put(static_cast<std::uint8_t>(e.sample.subset));
  write_video(w, e.sample.video);
  write_mel(w, e.sample.audio);
  write_video(w, e.sample.reference);
  w.put_tokens(e.sample.video_caption);
  w.put_tokens(e.sample.audio_caption);
  w.put_tokens(e.sample.speech);
  return std::move(w.bytes);
}

BufferEntry decode_entry(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  BufferEntry e;
  e.produced_at = r.get<std::uint64_t>();
  e.annotator_id = r.get<std::int32_t>();
  e.sample.clip_id = r.get<std::int64_t>();
  const auto subset = r.get<std::uint8_t>();
  require(subset <= 1, ErrorCode::kCorrupt, "bad subset tag on the wire");
  e.sample.subset = static_cast<SubsetTag>(subset);
  e.sample.video = read_video(r);
  e.sample.audio = read_mel(r);
  e.sample.reference = read_video(r);
  e.sample.video_caption = r.get_tokens();
  e.sample.audio_caption = r.get_tokens();
  e.sample.speech = r.get_tokens();
  require(r.done(), ErrorCode::kCorrupt, "trailing bytes in wire entry");
  return e;
}

BufferServer::BufferServer(BoundedBuffer& buffer, std::uint16_t port) : buffer_(buffer) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  require(listen_fd_ >= 0, ErrorCode::kIo, "cannot create socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0) {
    ::close(listen_fd_);
    fail(ErrorCode::kIo, std::string("cannot listen on loopback: ") + std::strerror(errno));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

BufferServer::~BufferServer() { stop(); }

void BufferServer::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : clients_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void BufferServer::accept_loop() {
  while (!stopping_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(mu_);
    if (stopping_) {
      ::close(fd);
      return;
    }
    clients_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void BufferServer::serve(int fd) {
  try {
    while (auto msg = recv_message(fd)) {
      try {
        if (msg->op == WireOp::kPut) {
          Writer w;
          w.put(buffer_.put(decode_entry(msg->payload)));
          send_message(fd, WireOp::kAck, w.bytes);
        } else if (msg->op == WireOp::kTake) {
          Reader r(msg->payload);
          const auto count = r.get<std::uint32_t>();
          const auto timeout = r.get<std::uint32_t>();
          auto got = buffer_.take(count, std::chrono::milliseconds(timeout));
          if (!got) {
            send_message(fd, WireOp::kTimeout, {});
            continue;
          }
          Writer w;
          w.put(static_cast<std::uint32_t>(got->size()));
          for (const BufferEntry& e : *got) {
            const auto bytes = encode_entry(e);
            w.put(static_cast<std::uint32_t>(bytes.size()));
            w.bytes.insert(w.bytes.end(), bytes.begin(), bytes.end());
          }
          send_message(fd, WireOp::kBatch, w.bytes);
        } else {
          fail(ErrorCode::kCorrupt, "unknown request op");
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kShutdown) {
          send_message(fd, WireOp::kShutdown, {});
        } else if (e.code() == ErrorCode::kIo) {
          throw;
        } else {
          const std::string text = e.what();
          send_message(fd, WireOp::kError, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
        }
      }
    }
  } catch (const Error&) {
    // Peer vanished; nothing to report to.
  }
  std::lock_guard lock(mu_);
  std::erase(clients_, fd);
  ::close(fd);
}

RemoteBuffer::RemoteBuffer(std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  require(fd_ >= 0, ErrorCode::kIo, "cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd_);
    fail(ErrorCode::kIo, "cannot connect to buffer server on port " + std::to_string(port));
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

RemoteBuffer::~RemoteBuffer() {
  if (fd_ >= 0) ::close(fd_);
}

namespace {

[[noreturn]] void fail_reply(const Message& m) {
  if (m.op == WireOp::kShutdown) fail(ErrorCode::kShutdown, "remote buffer cancelled");
  if (m.op == WireOp::kError) fail(ErrorCode::kIo, "remote error: " + std::string(m.payload.begin(), m.payload.end()));
  fail(ErrorCode::kCorrupt, "unexpected reply op");
}

}  // namespace

std::uint64_t RemoteBuffer::put(BufferEntry entry) {
  send_message(fd_, WireOp::kPut, encode_entry(entry));
  auto reply = recv_message(fd_);
  require(reply.has_value(), ErrorCode::kIo, "buffer server closed the connection");
  if (reply->op != WireOp::kAck) fail_reply(*reply);
  Reader r(reply->payload);
  return r.get<std::uint64_t>();
}

std::optional<std::vector<BufferEntry>> RemoteBuffer::take(std::size_t count, std::chrono::milliseconds timeout) {
  Writer w;
  w.put(static_cast<std::uint32_t>(count));
  w.put(static_cast<std::uint32_t>(timeout.count()));
  send_message(fd_, WireOp::kTake, w.bytes);
  auto reply = recv_message(fd_);
  require(reply.has_value(), ErrorCode::kIo, "buffer server closed the connection");
  if (reply->op == WireOp::kTimeout) return std::nullopt;
  if (reply->op != WireOp::kBatch) fail_reply(*reply);
  Reader r(reply->payload);
  const auto n = r.get<std::uint32_t>();
  std::vector<BufferEntry> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = r.get<std::uint32_t>();
    out.push_back(decode_entry(r.take(len)));
  }
  return out;
}

}  // namespace avs
