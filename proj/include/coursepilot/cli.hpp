#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace coursepilot::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point behind the `coursepilot` binary. `args` excludes the program
/// name. Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int cli_main(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace coursepilot::cli
