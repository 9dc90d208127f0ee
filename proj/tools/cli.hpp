#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vpcnn::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitVerifyFailed = 4;

/// Runs one subcommand. `args` excludes the program name. Metrics go to
/// `out` as key=value lines, logs to `err` one record per line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace vpcnn::cli
