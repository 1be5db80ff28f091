#pragma once

// Minimal stderr logging; level from TCSM_LOG (error, info, debug).

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace tcsm {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* v = std::getenv("TCSM_LOG");
    if (!v) return LogLevel::Error;
    const std::string_view s(v);
    if (s == "debug") return LogLevel::Debug;
    if (s == "info") return LogLevel::Info;
    return LogLevel::Error;
  }();
  return level;
}

inline void log_at(LogLevel l, std::string_view tag, const std::string& msg) {
  if (static_cast<int>(l) <= static_cast<int>(log_level())) std::cerr << "[tcsm " << tag << "] " << msg << '\n';
}

inline void log_error(const std::string& msg) { log_at(LogLevel::Error, "error", msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, "info", msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, "debug", msg); }

}  // namespace tcsm
