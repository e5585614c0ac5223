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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "common/digest.hpp"
#include "common/feature_grid.hpp"
#include "extractor/config.hpp"
#include "extractor/network.hpp"
#include "synthlab/image.hpp"

namespace consult::extractor {

using synthlab::GrayImage;

struct NamedTensor {
  std::string name;
  torch::Tensor value;  // CPU, contiguous
};

// Flat tensor archive: 8-byte magic, u64 header length, JSON header (config
// plus tensor name -> dtype, shape, byte offset), raw little-endian payload.
struct WeightSet {
  nlohmann::json config;  // ExtractorConfig the tensors were produced with
  std::vector<NamedTensor> tensors;

  void save(const std::filesystem::path& path) const;
  static WeightSet load(const std::filesystem::path& path);
  const NamedTensor* find(const std::string& name) const;
  // Content hash over names, shapes, dtypes and bytes in name order.
  Digest digest() const;
};

struct StageAttention {
  int stage = 0;
  torch::Tensor channel_gate;  // [C]
  torch::Tensor spatial_gate;  // [H,W]
  torch::Tensor gated;         // [C,H,W]
};

// Attention gates captured from the last single-image forward pass.
struct AttentionState {
  std::vector<StageAttention> stages;
};

struct ExtractResult {
  std::vector<torch::Tensor> stage_maps;  // [C,H,W] per used stage, gated
  AttentionState attention;
};

struct HeatMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// [B,1,H,W] float tensor of raw intensities.
torch::Tensor to_tensor(std::span<const GrayImage> images);

// Resize every map to the first map's spatial size (bilinear), concatenate
// along channels, then average-pool with a stride-1 window that ignores
// padding. Maps are [B,C,H,W]; result is [B,D,Hf,Wf].
torch::Tensor aggregate_layers(const std::vector<torch::Tensor>& stage_maps, int patch_neighborhood);

// Copies one [D,H,W] aggregated map into a row-major grid.
PatchFeatureGrid to_grid(const torch::Tensor& aggregated, std::vector<int> stage_dims, double spatial_scale);

// Channel mean of the gated activation, min-max normalised (0 when flat),
// bilinearly upscaled to out_height x out_width.
HeatMap attention_heatmap(const AttentionState& state, int stage, int out_height, int out_width);

class Extractor {
 public:
  // Seeded initialisation, or the pretrained trunk named by the config.
  Extractor(const ExtractorConfig& cfg, std::uint64_t init_seed);
  // Exact restore; names and shapes must match the configured network.
  Extractor(const ExtractorConfig& cfg, const WeightSet& weights);

  const ExtractorConfig& config() const { return cfg_; }
  ConsultNet& net() { return net_; }

  WeightSet weights() const;
  // Hash over weights and configuration; binds memory banks to extractors.
  Digest fingerprint() const;

  // Re-estimates BatchNorm running statistics from the given images in one
  // pass. Used when no pretrained statistics exist.
  void calibrate_batchnorm(std::span<const GrayImage> images);

  std::vector<StageOutput> forward(const torch::Tensor& batch) { return net_->forward(batch); }
  ExtractResult extract(const GrayImage& img);
  PatchFeatureGrid patch_grid(const GrayImage& img);
  std::vector<PatchFeatureGrid> patch_grids(std::span<const GrayImage> images);

 private:
  void load(const WeightSet& weights, bool allow_partial);

  ExtractorConfig cfg_;
  ConsultNet net_;
};

std::vector<NamedTensor> state_tensors(ConsultNet& net);

}  // namespace consult::extractor
