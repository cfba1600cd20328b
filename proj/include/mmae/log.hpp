#pragma once

#include <cstdlib>
#include <memory>
#include <string_view>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace mmae {

/// Library logger on standard error.  Level comes from MMAE_LOG
/// (error|warn|info|debug), default warn.
inline spdlog::logger& log() {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::get("mmae");
    if (!l) l = spdlog::stderr_logger_mt("mmae");
    l->set_pattern("[%l] %v");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("MMAE_LOG")) {
      std::string_view s(env);
      if (s == "error") level = spdlog::level::err;
      else if (s == "info") level = spdlog::level::info;
      else if (s == "debug") level = spdlog::level::debug;
    }
    l->set_level(level);
    return l;
  }();
  return *logger;
}

}  // namespace mmae
