// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace avs {

/// SplitMix64 finaliser; used to derive independent per-(step, sample) seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xD6E8FEB86659FD93ULL));
}

/// Reproducible random stream: MT19937-64 (std::mt19937_64, bit-exact across
/// conforming implementations) with uniforms built from the top 53 bits and
/// standard normals from the Box-Muller transform. The second Box-Muller
/// output is cached, so consumption is strictly sequential.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  void fill_normal(std::span<float> out);
  void fill_normal(std::span<double> out);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace avs
