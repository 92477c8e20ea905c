#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kitty::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Exit statuses shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitIo = 2,
  kExitPropertyFailure = 3,
};

// Runs `kitty-tool <args...>` (args excludes the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kitty::cli
