#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace mmfuse::cli {

enum ExitCode : int {
  kOk = 0,
  kVerificationFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
  kCheckpointMismatch = 5,
};

/// Maps a library exception onto the command-line exit code.
int exit_code_for(const std::exception& ex);

/// Entry point for `mmfuse <command> ...`; args exclude the program name.
/// Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfuse::cli
