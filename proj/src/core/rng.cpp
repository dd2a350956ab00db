// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/core/rng.hpp"

#include <cmath>
#include <numbers>

namespace avs {

std::uint64_t RandomStream::below(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double RandomStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

void RandomStream::fill_normal(std::span<float> out) {
  for (float& v : out) v = static_cast<float>(normal());
}

void RandomStream::fill_normal(std::span<double> out) {
  for (double& v : out) v = normal();
}

}  // namespace avs
