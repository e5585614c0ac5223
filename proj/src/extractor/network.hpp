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

#include <vector>

#include <torch/torch.h>

#include "extractor/config.hpp"

namespace consult::extractor {

// Residual unit of ResNet-18 (two 3x3 convs) or ResNet-50 (1x1-3x3-1x1
// bottleneck with expansion 4).
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int in_channels, int planes, int stride, bool bottleneck, const ExtractorConfig& cfg);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::Tensor act(const torch::Tensor& x) const;

  bool bottleneck_;
  Activation activation_;
  double slope_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  torch::nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Channel attention: avg- and max-pooled descriptors through a shared
// two-layer 1x1-conv MLP, summed, sigmoid.
class ChannelGateImpl : public torch::nn::Module {
 public:
  ChannelGateImpl(int channels, int reduction);
  torch::Tensor forward(const torch::Tensor& x);  // returns gate [B,C,1,1]
  void zero_output_layer();

 private:
  torch::nn::Conv2d fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ChannelGate);

// Spatial attention: channelwise mean and max maps, k x k conv, sigmoid.
class SpatialGateImpl : public torch::nn::Module {
 public:
  explicit SpatialGateImpl(int kernel);
  torch::Tensor forward(const torch::Tensor& x);  // returns gate [B,1,H,W]
  void zero_output_layer();

 private:
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(SpatialGate);

struct StageOutput {
  int stage = 0;
  torch::Tensor features;      // gated stage activation [B,C,H,W]
  torch::Tensor channel_gate;  // [B,C,1,1], empty when attention is off
  torch::Tensor spatial_gate;  // [B,1,H,W], empty when attention is off
};

// ResNet trunk up to the deepest used stage, with a CBAM attention tap after
// every used stage. Taps gate the emitted features only; the trunk carries
// the ungated activation to the next stage.
class ConsultNetImpl : public torch::nn::Module {
 public:
  explicit ConsultNetImpl(const ExtractorConfig& cfg);

  // x: [B,1,H,W] intensities in [0,255].
  std::vector<StageOutput> forward(const torch::Tensor& x);
  // Ungated trunk outputs for stages 1..max_stage.
  std::vector<torch::Tensor> trunk(const torch::Tensor& x);

  const ExtractorConfig& config() const { return cfg_; }
  // He-normal convs, unit BN, zero-initialised attention output layers.
  void reset_parameters(std::uint64_t seed);
  std::vector<torch::nn::BatchNorm2dImpl*> batchnorms();

 private:
  torch::Tensor act(const torch::Tensor& x) const;

  ExtractorConfig cfg_;
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
  std::vector<torch::nn::Sequential> layers_;
  std::vector<ChannelGate> channel_gates_;  // indexed like cfg_.stages_used
  std::vector<SpatialGate> spatial_gates_;
};
TORCH_MODULE(ConsultNet);

}  // namespace consult::extractor
