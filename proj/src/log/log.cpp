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

#include "log/log.hpp"

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include <spdlog/spdlog.h>

namespace consult::log {

namespace {

std::string vformat(const char* fmt, va_list args) {
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  if (n <= 0) return {};
  std::vector<char> buf(static_cast<std::size_t>(n) + 1);
  std::vsnprintf(buf.data(), buf.size(), fmt, args);
  return std::string(buf.data(), static_cast<std::size_t>(n));
}

void emit(spdlog::level::level_enum lvl, const char* fmt, va_list args) {
  if (!spdlog::should_log(lvl)) return;
  spdlog::log(lvl, "{}", vformat(fmt, args));
}

}  // namespace

void set_level(Level level) {
  switch (level) {
    case Level::kDebug: spdlog::set_level(spdlog::level::debug); break;
    case Level::kInfo: spdlog::set_level(spdlog::level::info); break;
    case Level::kWarn: spdlog::set_level(spdlog::level::warn); break;
    case Level::kError: spdlog::set_level(spdlog::level::err); break;
    case Level::kOff: spdlog::set_level(spdlog::level::off); break;
  }
}

Level parse_level(const std::string& name) {
  if (name == "debug") return Level::kDebug;
  if (name == "info") return Level::kInfo;
  if (name == "warn") return Level::kWarn;
  if (name == "error") return Level::kError;
  if (name == "off") return Level::kOff;
  throw std::invalid_argument("unknown log level: " + name);
}

#define CONSULT_LOG_FN(name, lvl)        \
  void name(const char* fmt, ...) {      \
    va_list args;                        \
    va_start(args, fmt);                 \
    emit(spdlog::level::lvl, fmt, args); \
    va_end(args);                        \
  }

CONSULT_LOG_FN(debug, debug)
CONSULT_LOG_FN(info, info)
CONSULT_LOG_FN(warn, warn)
CONSULT_LOG_FN(error, err)

#undef CONSULT_LOG_FN

}  // namespace consult::log
