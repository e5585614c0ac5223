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

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "synthlab/image.hpp"

namespace consult::harness {

enum class Stage { kSetup, kSplit, kSynth, kTrain, kBank, kScore, kReport };

const char* to_string(Stage s);

// Guards image reads during an experiment. Files registered as test split
// may not be opened while the run is in a stage that builds the model.
class AccessAudit {
 public:
  void forbid(const std::filesystem::path& path);
  void set_stage(Stage s) { stage_ = s; }
  Stage stage() const { return stage_; }

  // Throws DataError on a hygiene violation.
  void check(const std::filesystem::path& path) const;
  synthlab::GrayImage read_image(const std::filesystem::path& path);
  synthlab::DefectMask read_mask(const std::filesystem::path& path);

  struct Access {
    Stage stage;
    std::string path;
  };
  const std::vector<Access>& log() const { return log_; }

 private:
  static std::string key(const std::filesystem::path& path);
  Stage stage_ = Stage::kSetup;
  std::set<std::string> forbidden_;
  std::vector<Access> log_;
};

}  // namespace consult::harness
