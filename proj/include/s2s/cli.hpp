#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace s2s {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

// Runs one `s2s <subcommand> [flags]` invocation. args excludes the program
// name. Data goes to files or `out`; progress and errors go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace s2s
