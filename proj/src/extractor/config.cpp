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

#include "extractor/config.hpp"

#include <algorithm>

#include "common/error.hpp"
#include "common/json_util.hpp"

namespace consult::extractor {

const char* to_string(Activation a) { return a == Activation::kRelu ? "relu" : "leaky_relu"; }

void ExtractorConfig::validate() const {
  if (backbone_depth != 18 && backbone_depth != 50)
    throw ConfigError("extractor.backbone_depth must be 18 or 50");
  if (stages_used.empty()) throw ConfigError("extractor.stages_used must be nonempty");
  for (std::size_t i = 0; i < stages_used.size(); ++i) {
    if (stages_used[i] < 1 || stages_used[i] > 4) throw ConfigError("extractor.stages_used must be within {1,2,3,4}");
    if (i > 0 && stages_used[i] <= stages_used[i - 1])
      throw ConfigError("extractor.stages_used must be strictly ascending");
  }
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) throw ConfigError("extractor.spatial_kernel must be odd");
  if (patch_neighborhood < 1 || patch_neighborhood % 2 == 0)
    throw ConfigError("extractor.patch_neighborhood must be odd");
  if (attention_reduction < 1) throw ConfigError("extractor.attention_reduction must be >= 1");
  if (base_width < 1) throw ConfigError("extractor.base_width must be >= 1");
  if (!(leaky_slope >= 0.0)) throw ConfigError("extractor.leaky_slope must be >= 0");
  if (pretrained && pretrained_path.empty())
    throw ConfigError("extractor.pretrained requires extractor.pretrained_path");
}

int ExtractorConfig::stage_channels(int stage) const {
  const int expansion = backbone_depth == 50 ? 4 : 1;
  return base_width * (1 << (stage - 1)) * expansion;
}

int ExtractorConfig::feature_dim() const {
  int d = 0;
  for (int s : stages_used) d += stage_channels(s);
  return d;
}

nlohmann::json to_json(const ExtractorConfig& cfg) {
  return {{"backbone_depth", cfg.backbone_depth},
          {"use_attention", cfg.use_attention},
          {"activation", to_string(cfg.activation)},
          {"leaky_slope", cfg.leaky_slope},
          {"stages_used", cfg.stages_used},
          {"attention_reduction", cfg.attention_reduction},
          {"spatial_kernel", cfg.spatial_kernel},
          {"patch_neighborhood", cfg.patch_neighborhood},
          {"base_width", cfg.base_width},
          {"pretrained", cfg.pretrained},
          {"pretrained_path", cfg.pretrained_path}};
}

ExtractorConfig extractor_config_from_json(const nlohmann::json& j) {
  constexpr const char* kSection = "extractor";
  check_keys(j,
             {"backbone_depth", "use_attention", "activation", "leaky_slope", "stages_used", "attention_reduction",
              "spatial_kernel", "patch_neighborhood", "base_width", "pretrained", "pretrained_path"},
             kSection);
  ExtractorConfig c;
  c.backbone_depth = get_or(j, "backbone_depth", c.backbone_depth, kSection);
  c.use_attention = get_or(j, "use_attention", c.use_attention, kSection);
  const auto act = get_or<std::string>(j, "activation", to_string(c.activation), kSection);
  if (act == "relu")
    c.activation = Activation::kRelu;
  else if (act == "leaky_relu" || act == "leaky")
    c.activation = Activation::kLeakyRelu;
  else
    throw ConfigError("extractor.activation must be 'relu' or 'leaky_relu'");
  c.leaky_slope = get_or(j, "leaky_slope", c.leaky_slope, kSection);
  c.stages_used = get_or(j, "stages_used", c.stages_used, kSection);
  c.attention_reduction = get_or(j, "attention_reduction", c.attention_reduction, kSection);
  c.spatial_kernel = get_or(j, "spatial_kernel", c.spatial_kernel, kSection);
  c.patch_neighborhood = get_or(j, "patch_neighborhood", c.patch_neighborhood, kSection);
  c.base_width = get_or(j, "base_width", c.base_width, kSection);
  c.pretrained = get_or(j, "pretrained", c.pretrained, kSection);
  c.pretrained_path = get_or(j, "pretrained_path", c.pretrained_path, kSection);
  c.validate();
  return c;
}

}  // namespace consult::extractor
