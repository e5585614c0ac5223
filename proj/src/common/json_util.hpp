/**
 * Copyright 2026 The CONSULT Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "common/error.hpp"
#include "nlohmann/json.hpp"

namespace consult {

// Rejects keys outside the allowed set so typos in config files surface as
// configuration errors instead of silently falling back to defaults.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, const T& fallback, std::string_view section) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

}  // namespace consult
