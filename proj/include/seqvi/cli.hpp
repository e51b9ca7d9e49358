#pragma once

#include <string>
#include <vector>

namespace seqvi::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntime = 1,
  kUsage = 2,
  kPropertyViolation = 3,
};

// Runs one command line (without the program name); never throws.
int run(const std::vector<std::string>& args);

}  // namespace seqvi::cli
