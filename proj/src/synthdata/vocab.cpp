// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/synthdata/vocab.hpp"

#include <array>

namespace avs::vocab {

std::string_view name(std::int32_t id) {
  static constexpr std::array<std::string_view, 14> kNames{
      "PAD",     "TAG_V",   "TAG_A",      "NO_SPEECH",    "QUAD_UL",    "QUAD_UR",   "QUAD_LL",
      "QUAD_LR", "SPEED_SLOW", "SPEED_MEDIUM", "SPEED_FAST", "PITCH_DOWN", "PITCH_FLAT", "PITCH_UP"};
  if (id >= 0 && id < static_cast<std::int32_t>(kNames.size())) return kNames[static_cast<std::size_t>(id)];
  if (id >= 0 && id < kSize) return "FILLER";
  return "UNKNOWN";
}

}  // namespace avs::vocab
