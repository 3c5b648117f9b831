#pragma once

#include <cstdlib>
#include <string>
#include <utility>

#include <fmt/core.h>

namespace tofvae::cli {

// Verbosity from TOFVAE_LOG (quiet|info|debug); info when unset. Logs go
// to stderr so stdout stays clean for data.
enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("TOFVAE_LOG");
    if (!env) return LogLevel::Info;
    const std::string v(env);
    if (v == "quiet" || v == "0") return LogLevel::Quiet;
    if (v == "debug" || v == "2") return LogLevel::Debug;
    return LogLevel::Info;
  }();
  return level;
}

template <typename... Args>
void log_info(fmt::format_string<Args...> f, Args&&... args) {
  if (log_level() >= LogLevel::Info) {
    fmt::print(stderr, f, std::forward<Args>(args)...);
    fmt::print(stderr, "\n");
  }
}

template <typename... Args>
void log_debug(fmt::format_string<Args...> f, Args&&... args) {
  if (log_level() >= LogLevel::Debug) {
    fmt::print(stderr, f, std::forward<Args>(args)...);
    fmt::print(stderr, "\n");
  }
}

} // namespace tofvae::cli
