#pragma once

// Logging goes to stderr through spdlog. ACI_LOG selects the level
// (error, info or debug); anything else, or no value, means warnings and up.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string_view>

namespace aci {

inline spdlog::level::level_enum log_level_from_env() {
    const char* v = std::getenv("ACI_LOG");
    const std::string_view s = v ? v : "";
    if (s == "error") return spdlog::level::err;
    if (s == "info") return spdlog::level::info;
    if (s == "debug") return spdlog::level::debug;
    return spdlog::level::warn;
}

/// Points the default logger at stderr and applies ACI_LOG. Safe to call repeatedly.
inline void configure_logging() {
    static const bool once = [] {
        auto logger = spdlog::stderr_color_mt("aci");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
        return true;
    }();
    (void)once;
    spdlog::set_level(log_level_from_env());
}

}  // namespace aci
