#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

// Verbosity is controlled by the DSNET_LOG environment variable:
// "quiet" silences everything, "debug" adds per-step detail, anything else
// (or unset) means the default "info". Messages go to stderr so they never
// mix with report output on stdout.
namespace dsnet {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("DSNET_LOG");
        if (env != nullptr) {
            const std::string s = env;
            if (s == "quiet") return LogLevel::Quiet;
            if (s == "debug") return LogLevel::Debug;
        }
        return LogLevel::Info;
    }();
    return level;
}

inline void log_info(const std::string& msg) {
    if (static_cast<int>(log_level()) >= static_cast<int>(LogLevel::Info))
        std::cerr << "[info] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
    if (static_cast<int>(log_level()) >= static_cast<int>(LogLevel::Debug))
        std::cerr << "[debug] " << msg << "\n";
}

}  // namespace dsnet
