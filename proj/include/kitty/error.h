#pragma once

#include <stdexcept>
#include <string>

namespace kitty {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kEmptyInput,
  kNonFinite,
  kCodeOutOfRange,
  kMalformedSentinel,
  kStateNotEmpty,
  kEmptyCache,
  // tensor/page file errors
  kBadMagic,
  kUnknownDtype,
  kBadRank,
  kTruncated,
  kIo,
};

const char* to_string(ErrorCode code);

// Thrown by every library operation. The code distinguishes failure classes
// so callers (the CLI in particular) can map them to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace kitty
