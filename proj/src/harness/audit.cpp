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

#include "harness/audit.hpp"

#include "common/error.hpp"

namespace consult::harness {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::kSetup: return "setup";
    case Stage::kSplit: return "split";
    case Stage::kSynth: return "synth";
    case Stage::kTrain: return "train";
    case Stage::kBank: return "bank";
    case Stage::kScore: return "score";
    case Stage::kReport: return "report";
  }
  return "?";
}

std::string AccessAudit::key(const std::filesystem::path& path) {
  return std::filesystem::weakly_canonical(std::filesystem::absolute(path)).string();
}

void AccessAudit::forbid(const std::filesystem::path& path) { forbidden_.insert(key(path)); }

void AccessAudit::check(const std::filesystem::path& path) const {
  const bool guarded = stage_ == Stage::kSplit || stage_ == Stage::kSynth || stage_ == Stage::kTrain ||
                       stage_ == Stage::kBank;
  if (guarded && forbidden_.contains(key(path)))
    throw DataError("training-data hygiene violation: test file " + path.string() + " opened during " +
                    to_string(stage_));
}

synthlab::GrayImage AccessAudit::read_image(const std::filesystem::path& path) {
  check(path);
  log_.push_back({stage_, path.string()});
  return synthlab::read_png(path);
}

synthlab::DefectMask AccessAudit::read_mask(const std::filesystem::path& path) {
  check(path);
  log_.push_back({stage_, path.string()});
  return synthlab::read_mask_png(path);
}

}  // namespace consult::harness
