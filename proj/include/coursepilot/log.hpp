#pragma once

#include <spdlog/spdlog.h>

namespace coursepilot {

/// Shared stderr logger; stdout is reserved for CLI output.
spdlog::logger& log();

}  // namespace coursepilot
