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

#include <string>
#include <vector>

#include "nlohmann/json.hpp"

namespace consult::extractor {

enum class Activation { kRelu, kLeakyRelu };

struct ExtractorConfig {
  int backbone_depth = 18;  // 18 (basic blocks) or 50 (bottlenecks)
  bool use_attention = true;
  Activation activation = Activation::kLeakyRelu;
  double leaky_slope = 0.01;
  std::vector<int> stages_used{1, 2, 3};
  int attention_reduction = 16;
  int spatial_kernel = 7;
  int patch_neighborhood = 3;
  // Channel count of the first residual stage; 64 is the standard trunk.
  int base_width = 64;
  // Load trunk weights from pretrained_path instead of seeded initialisation.
  bool pretrained = false;
  std::string pretrained_path;

  void validate() const;
  int max_stage() const { return stages_used.back(); }
  // Output channels of a residual stage (1-based).
  int stage_channels(int stage) const;
  int feature_dim() const;
};

nlohmann::json to_json(const ExtractorConfig& cfg);
ExtractorConfig extractor_config_from_json(const nlohmann::json& j);

const char* to_string(Activation a);

}  // namespace consult::extractor
