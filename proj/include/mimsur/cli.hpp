#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mimsur::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Process exit codes, stable for scripting.
enum ExitCode : int {
    kOk = 0,
    kIoFailure = 2,
    kUsage = 64,
    kRefused = 65,
    kBadInput = 66,
};

/// Runs one subcommand (args exclude the program name). Results go to `out`,
/// progress and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mimsur::cli
