#pragma once

#include <string>
#include <vector>

namespace prokcat {

/// Command-line entry point. Commands: train, predict, extract-formula,
/// analyze, sweep, fingerprint, parse. Exit codes: 0 success, 1 internal
/// error, 2 bad input/path, 3 incompatible checkpoint.
int run_cli(int argc, const char* const* argv);

/// Convenience overload for in-process invocation (tests).
int run_cli(const std::vector<std::string>& args);

}  // namespace prokcat
