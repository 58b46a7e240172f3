#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace trajlens {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `trajlens` tool; args exclude the program name.
/// Failures print a JSON error object to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string tool_version();

}  // namespace trajlens
