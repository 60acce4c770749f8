#pragma once
// Strict JSON config reading: missing keys keep defaults, unknown keys are errors.

#include "prism/scene_io.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace prism::cfgjson {

template <class T>
void take(const json& j, const char* key, T& dst, std::vector<std::string>& seen) {
  seen.emplace_back(key);
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, const std::vector<std::string>& seen, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(seen.begin(), seen.end(), it.key()) == seen.end()) {
      throw ConfigError("unknown config key '" + where + it.key() + "'");
    }
  }
}

}  // namespace prism::cfgjson
