// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include "avs/core/error.hpp"

namespace avs {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDivisibility: return "DIVISIBILITY";
    case ErrorCode::kRatio: return "RATIO";
    case ErrorCode::kRange: return "RANGE";
    case ErrorCode::kIo: return "IO";
    case ErrorCode::kCorrupt: return "CORRUPT";
    case ErrorCode::kShape: return "SHAPE";
    case ErrorCode::kDepth: return "DEPTH";
    case ErrorCode::kNameMismatch: return "NAME_MISMATCH";
    case ErrorCode::kSameSeed: return "SAME_SEED";
    case ErrorCode::kBounds: return "BOUNDS";
    case ErrorCode::kShutdown: return "SHUTDOWN";
    case ErrorCode::kTimeout: return "TIMEOUT";
    case ErrorCode::kNonFinite: return "NONFINITE";
    case ErrorCode::kUsage: return "USAGE";
  }
  return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace avs
