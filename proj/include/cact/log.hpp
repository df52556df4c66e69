#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

#include "cact/errors.hpp"

namespace cact {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline const char* to_string(LogLevel l) {
  switch (l) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
    case LogLevel::off: return "off";
  }
  return "?";
}

inline LogLevel log_level_from(const std::string& s) {
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  if (s == "warn") return LogLevel::warn;
  if (s == "error") return LogLevel::error;
  if (s == "off") return LogLevel::off;
  throw ConfigError("unknown log level: " + s, "CACT_LOG");
}

// Threshold starts from the CACT_LOG environment variable; an unset or
// unparsable value falls back to info.
inline LogLevel& log_threshold() {
  static LogLevel level = [] {
    const char* env = std::getenv("CACT_LOG");
    if (env && *env) {
      try {
        return log_level_from(env);
      } catch (const ConfigError&) {
      }
    }
    return LogLevel::info;
  }();
  return level;
}

inline void log(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) < static_cast<int>(log_threshold()) || level == LogLevel::off)
    return;
  std::fprintf(stderr, "[%s] %s\n", to_string(level), msg.c_str());
}

inline void log_debug(const std::string& m) { log(LogLevel::debug, m); }
inline void log_info(const std::string& m) { log(LogLevel::info, m); }
inline void log_warn(const std::string& m) { log(LogLevel::warn, m); }
inline void log_error(const std::string& m) { log(LogLevel::error, m); }

}  // namespace cact
