// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "avs/core/types.hpp"

namespace avs {

// Shard container, all integers little-endian:
//
//   header  : "AVSH" u32 version u32 kind u64 count
//   sample  : i64 clip_id, u8 subset,
//             3 x tensor (u32 rank, u32 dims[rank], f32 payload[numel])
//               in the order video, audio, reference,
//             3 x tokens (u32 length, i32 ids[length])
//               in the order video caption, audio caption, speech
//   tensor  : u32 name_len, name bytes, u8 dtype (0 f32, 1 f64),
//             u32 rank, u32 dims[rank], payload
//   footer  : u64 FNV-1a checksum of every payload byte,
//             u64 FNV-1a checksum of every byte before the footer, "HSVA"

inline constexpr std::uint32_t kShardVersion = 1;

enum class ShardKind : std::uint32_t { kSamples = 1, kTensors = 2 };

/// Writes `samples` to `path`; returns the number written. Throws RANGE on
/// an empty list and IO when the file cannot be written.
std::size_t write_shard(std::span<const SampleTuple> samples, const std::filesystem::path& path);

/// Reads a sample shard. Throws IO (cannot open) or CORRUPT (bad magic,
/// truncated record, length mismatch, checksum mismatch).
std::vector<SampleTuple> read_shard(const std::filesystem::path& path);

/// FNV-1a 64 over the concatenated tensor payloads, in file order.
std::uint64_t payload_checksum(std::span<const SampleTuple> samples);

/// Checksum stored in the footer of an existing shard file.
std::uint64_t stored_checksum(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

/// Checkpoint flavour of the same container: a flat name -> tensor map
/// stored at double precision so resumed runs are bit-identical.
void write_tensors(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

}  // namespace avs
