#pragma once

// Strict JSON field access shared by the config parsers. Unknown keys are
// rejected so that typos in config files fail loudly.

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"
#include "poolcf/error.hpp"

namespace poolcf::detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) throw ConfigError(std::string(context) + ": unknown key '" + key + "'");
  }
}

template <typename T>
T required(const json& j, std::string_view key, std::string_view context) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ConfigError(std::string(context) + ": missing required key '" + std::string(key) + "'");
  }
  try {
    return it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(context) + "." + std::string(key) + ": " + e.what());
  }
}

template <typename T>
T optional(const json& j, std::string_view key, T fallback, std::string_view context) {
  if (!j.contains(key)) return fallback;
  return required<T>(j, key, context);
}

}  // namespace poolcf::detail
