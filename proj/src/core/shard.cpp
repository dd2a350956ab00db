// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/core/shard.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "avs/core/error.hpp"

namespace avs {
namespace {

constexpr std::array<char, 4> kMagic{'A', 'V', 'S', 'H'};
constexpr std::array<char, 4> kEndMagic{'H', 'S', 'V', 'A'};
constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

void fnv_update(std::uint64_t& h, const unsigned char* bytes, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    buf_.insert(buf_.end(), bytes, bytes + sizeof(T));
  }

  template <typename T>
  void put_payload(std::span<const T> values) {
    const std::size_t start = buf_.size();
    for (const T& v : values) put(v);
    fnv_update(checksum_, buf_.data() + start, buf_.size() - start);
  }

  void put_bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }

  std::uint64_t checksum() const { return checksum_; }
  std::uint64_t record_checksum() const {
    std::uint64_t h = kFnvOffset;
    fnv_update(h, buf_.data(), buf_.size());
    return h;
  }

  void flush(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
  }

 private:
  std::vector<unsigned char> buf_;
  std::uint64_t checksum_ = kFnvOffset;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::kIo, "cannot open " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  template <typename T>
  std::vector<T> get_payload(std::size_t count) {
    // Guard against absurd lengths before allocating.
    require(count <= remaining() / sizeof(T), ErrorCode::kCorrupt, "payload length exceeds file size");
    const std::size_t start = pos_;
    std::vector<T> out(count);
    for (T& v : out) v = get<T>();
    fnv_update(checksum_, reinterpret_cast<const unsigned char*>(buf_.data()) + start, pos_ - start);
    return out;
  }

  void expect_bytes(const std::array<char, 4>& magic, const char* what) {
    need(4);
    require(std::memcmp(buf_.data() + pos_, magic.data(), 4) == 0, ErrorCode::kCorrupt,
            std::string("bad ") + what);
    pos_ += 4;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }
  std::uint64_t checksum() const { return checksum_; }
  std::uint64_t record_checksum() const {
    std::uint64_t h = kFnvOffset;
    fnv_update(h, reinterpret_cast<const unsigned char*>(buf_.data()), pos_);
    return h;
  }

 private:
  void need(std::size_t n) const {
    require(remaining() >= n, ErrorCode::kCorrupt, "unexpected end of shard");
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::uint64_t checksum_ = kFnvOffset;
};

void put_header(Writer& w, ShardKind kind, std::uint64_t count) {
  w.put_bytes(kMagic.data(), kMagic.size());
  w.put(kShardVersion);
  w.put(static_cast<std::uint32_t>(kind));
  w.put(count);
}

std::uint64_t get_header(Reader& r, ShardKind kind) {
  r.expect_bytes(kMagic, "magic");
  require(r.get<std::uint32_t>() == kShardVersion, ErrorCode::kCorrupt, "unsupported shard version");
  require(r.get<std::uint32_t>() == static_cast<std::uint32_t>(kind), ErrorCode::kCorrupt,
          "unexpected shard kind");
  return r.get<std::uint64_t>();
}

void put_footer(Writer& w) {
  const std::uint64_t record = w.record_checksum();
  w.put(w.checksum());
  w.put(record);
  w.put_bytes(kEndMagic.data(), kEndMagic.size());
}

void get_footer(Reader& r) {
  const std::uint64_t computed = r.checksum();
  const std::uint64_t record = r.record_checksum();
  require(r.get<std::uint64_t>() == computed, ErrorCode::kCorrupt, "checksum mismatch");
  require(r.get<std::uint64_t>() == record, ErrorCode::kCorrupt, "record checksum mismatch");
  r.expect_bytes(kEndMagic, "end marker");
  require(r.remaining() == 0, ErrorCode::kCorrupt, "trailing bytes after shard footer");
}

void put_dims(Writer& w, std::span<const std::int64_t> dims) {
  w.put(static_cast<std::uint32_t>(dims.size()));
  for (std::int64_t d : dims) w.put(static_cast<std::uint32_t>(d));
}

std::vector<std::int64_t> get_dims(Reader& r) {
  const auto rank = r.get<std::uint32_t>();
  require(rank <= 8, ErrorCode::kCorrupt, "tensor rank out of range");
  std::vector<std::int64_t> dims(rank);
  for (auto& d : dims) d = r.get<std::uint32_t>();
  return dims;
}

std::int64_t product(std::span<const std::int64_t> dims) {
  std::int64_t n = 1;
  for (std::int64_t d : dims) n *= d;
  return n;
}

void put_video(Writer& w, const VideoLatent& v) {
  const VideoShape& s = v.shape();
  const std::int64_t dims[] = {s.channels, s.frames, s.height, s.width};
  put_dims(w, dims);
  w.put_payload(v.data());
}

VideoLatent get_video(Reader& r) {
  const auto dims = get_dims(r);
  require(dims.size() == 4, ErrorCode::kCorrupt, "video tensor must be rank 4");
  VideoShape shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
                   static_cast<int>(dims[3])};
  return VideoLatent(shape, r.get_payload<float>(static_cast<std::size_t>(product(dims))));
}

void put_mel(Writer& w, const MelLatent& m) {
  const MelShape& s = m.shape();
  const std::int64_t dims[] = {s.channels, s.time, s.freq};
  put_dims(w, dims);
  w.put_payload(m.data());
}

MelLatent get_mel(Reader& r) {
  const auto dims = get_dims(r);
  require(dims.size() == 3, ErrorCode::kCorrupt, "mel tensor must be rank 3");
  MelShape shape{static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};
  return MelLatent(shape, r.get_payload<float>(static_cast<std::size_t>(product(dims))));
}

void put_tokens(Writer& w, const TokenSeq32& tokens) {
  w.put(static_cast<std::uint32_t>(tokens.size()));
  for (std::int32_t t : tokens) w.put(t);
}

TokenSeq32 get_tokens(Reader& r) {
  const auto n = r.get<std::uint32_t>();
  require(n <= r.remaining() / sizeof(std::int32_t), ErrorCode::kCorrupt, "token length exceeds file size");
  TokenSeq32 tokens(n);
  for (auto& t : tokens) t = r.get<std::int32_t>();
  return tokens;
}

void put_sample(Writer& w, const SampleTuple& s) {
  w.put(s.clip_id);
  w.put(static_cast<std::uint8_t>(s.subset));
  put_video(w, s.video);
  put_mel(w, s.audio);
  put_video(w, s.reference);
  put_tokens(w, s.video_caption);
  put_tokens(w, s.audio_caption);
  put_tokens(w, s.speech);
}

SampleTuple get_sample(Reader& r) {
  SampleTuple s;
  s.clip_id = r.get<std::int64_t>();
  const auto subset = r.get<std::uint8_t>();
  require(subset <= 1, ErrorCode::kCorrupt, "unknown subset tag");
  s.subset = static_cast<SubsetTag>(subset);
  s.video = get_video(r);
  s.audio = get_mel(r);
  s.reference = get_video(r);
  s.video_caption = get_tokens(r);
  s.audio_caption = get_tokens(r);
  s.speech = get_tokens(r);
  return s;
}

}  // namespace

std::size_t write_shard(std::span<const SampleTuple> samples, const std::filesystem::path& path) {
  require(!samples.empty(), ErrorCode::kRange, "refusing to write an empty shard");
  Writer w;
  put_header(w, ShardKind::kSamples, samples.size());
  for (const SampleTuple& s : samples) put_sample(w, s);
  put_footer(w);
  w.flush(path);
  return samples.size();
}

std::vector<SampleTuple> read_shard(const std::filesystem::path& path) {
  Reader r(path);
  const std::uint64_t count = get_header(r, ShardKind::kSamples);
  std::vector<SampleTuple> samples;
  for (std::uint64_t i = 0; i < count; ++i) samples.push_back(get_sample(r));
  get_footer(r);
  return samples;
}

std::uint64_t payload_checksum(std::span<const SampleTuple> samples) {
  Writer w;
  for (const SampleTuple& s : samples) put_sample(w, s);
  return w.checksum();
}

std::uint64_t stored_checksum(const std::filesystem::path& path) {
  Reader r(path);
  const std::uint64_t count = get_header(r, ShardKind::kSamples);
  for (std::uint64_t i = 0; i < count; ++i) (void)get_sample(r);
  const std::uint64_t computed = r.checksum();
  const auto stored = r.get<std::uint64_t>();
  require(stored == computed, ErrorCode::kCorrupt, "checksum mismatch");
  return stored;
}

void write_tensors(std::span<const NamedTensor> tensors, const std::filesystem::path& path) {
  Writer w;
  put_header(w, ShardKind::kTensors, tensors.size());
  for (const NamedTensor& t : tensors) {
    require(product(t.shape) == static_cast<std::int64_t>(t.data.size()), ErrorCode::kShape,
            "tensor '" + t.name + "' payload does not match its shape");
    w.put(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put(std::uint8_t{1});
    put_dims(w, t.shape);
    w.put_payload(std::span<const double>(t.data));
  }
  put_footer(w);
  w.flush(path);
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  Reader r(path);
  const std::uint64_t count = get_header(r, ShardKind::kTensors);
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = r.get<std::uint32_t>();
    t.name = r.get_string(len);
    const auto dtype = r.get<std::uint8_t>();
    t.shape = get_dims(r);
    const auto n = static_cast<std::size_t>(product(t.shape));
    if (dtype == 1) {
      t.data = r.get_payload<double>(n);
    } else if (dtype == 0) {
      const auto f = r.get_payload<float>(n);
      t.data.assign(f.begin(), f.end());
    } else {
      fail(ErrorCode::kCorrupt, "unknown dtype in tensor '" + t.name + "'");
    }
    out.push_back(std::move(t));
  }
  get_footer(r);
  return out;
}

}  // namespace avs
