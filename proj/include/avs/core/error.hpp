// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace avs {

enum class ErrorCode {
  kDivisibility,
  kRatio,
  kRange,
  kIo,
  kCorrupt,
  kShape,
  kDepth,
  kNameMismatch,
  kSameSeed,
  kBounds,
  kShutdown,
  kTimeout,
  kNonFinite,
  kUsage,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit path) can branch on the kind of error.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace avs
