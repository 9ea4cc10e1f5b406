#pragma once

// Strict reading of JSON configuration objects: unknown keys and ill-typed
// values are configuration errors rather than silently ignored.

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dwm/errors.hpp"

namespace dwm {

inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> keys,
                               std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
T config_value(const nlohmann::json& j, const char* key, const T& fallback, std::string_view section) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string(section) + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace dwm
