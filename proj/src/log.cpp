#include "coursepilot/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

namespace coursepilot {

spdlog::logger& log() {
    static const auto logger = [] {
        auto l = spdlog::stderr_color_mt("coursepilot");
        l->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%^%l%$] %v");
        return l;
    }();
    return *logger;
}

}  // namespace coursepilot
