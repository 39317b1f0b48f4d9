#pragma once

// Line-delimited JSON log records on stderr.

#include <atomic>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace storyweave::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::Info};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline std::string_view level_name(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    case Level::Off: break;
  }
  return "off";
}

inline void emit(Level level, std::string_view event, nlohmann::json fields = nlohmann::json::object()) {
  if (level < threshold().load()) return;
  nlohmann::json record = {{"level", level_name(level)}, {"event", event}};
  if (fields.is_object()) {
    for (auto& [k, v] : fields.items()) record[k] = v;
  }
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << record.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

inline void debug(std::string_view event, nlohmann::json fields = nlohmann::json::object()) {
  emit(Level::Debug, event, std::move(fields));
}
inline void info(std::string_view event, nlohmann::json fields = nlohmann::json::object()) {
  emit(Level::Info, event, std::move(fields));
}
inline void warn(std::string_view event, nlohmann::json fields = nlohmann::json::object()) {
  emit(Level::Warn, event, std::move(fields));
}
inline void error(std::string_view event, nlohmann::json fields = nlohmann::json::object()) {
  emit(Level::Error, event, std::move(fields));
}

}  // namespace storyweave::log
