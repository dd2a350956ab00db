// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace avs::vocab {

// Fixed 64-entry caption vocabulary. Ids 14..63 are unused filler.
inline constexpr int kSize = 64;

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kTagVideo = 1;
inline constexpr std::int32_t kTagAudio = 2;
inline constexpr std::int32_t kNoSpeech = 3;
inline constexpr std::int32_t kQuadUL = 4;
inline constexpr std::int32_t kQuadUR = 5;
inline constexpr std::int32_t kQuadLL = 6;
inline constexpr std::int32_t kQuadLR = 7;
inline constexpr std::int32_t kSpeedSlow = 8;
inline constexpr std::int32_t kSpeedMedium = 9;
inline constexpr std::int32_t kSpeedFast = 10;
inline constexpr std::int32_t kPitchDown = 11;
inline constexpr std::int32_t kPitchFlat = 12;
inline constexpr std::int32_t kPitchUp = 13;

enum class Quadrant { kUpperLeft, kUpperRight, kLowerLeft, kLowerRight };
enum class SpeedClass { kSlow, kMedium, kFast };
enum class PitchDirection { kDown, kFlat, kUp };

constexpr std::int32_t token(Quadrant q) { return kQuadUL + static_cast<std::int32_t>(q); }
constexpr std::int32_t token(SpeedClass s) { return kSpeedSlow + static_cast<std::int32_t>(s); }
constexpr std::int32_t token(PitchDirection p) { return kPitchDown + static_cast<std::int32_t>(p); }

std::string_view name(std::int32_t id);

}  // namespace avs::vocab
