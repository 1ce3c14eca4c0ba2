#pragma once

#include <string>
#include <vector>

namespace maldet::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitNumeric = 3,
};

/// Runs the `maldet` command line. `args[0]` is the program name.
/// Results go to stdout, logs and diagnostics to stderr.
int run(const std::vector<std::string>& args);

}  // namespace maldet::cli
