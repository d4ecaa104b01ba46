#pragma once

// Command-line front end: generate | run | report.
//
// Exit codes:
//   0  success
//   1  configuration or usage error, malformed report input
//   2  I/O error while generating or reading a dataset
//   3  model training failure
//   4  could not write coverage reports or plot data

#include <iosfwd>
#include <string>
#include <vector>

namespace lercp::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kIoError = 2,
  kTrainingError = 3,
  kWriteError = 4,
};

/// Runs one invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Renders the merged per-edge table for already-loaded report files.
/// Throws std::runtime_error naming the offending file on malformed input.
std::string render_reports(const std::vector<std::string>& paths);

}  // namespace lercp::cli
