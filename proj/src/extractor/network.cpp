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

#include "extractor/network.hpp"

#include <cmath>
#include <string>

namespace consult::extractor {

namespace nn = torch::nn;

namespace {

constexpr double kInputMean = 0.449;
constexpr double kInputStd = 0.226;

nn::Conv2d conv(int in, int out, int k, int stride, int pad, bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

// Logits beyond +-16 would round the float32 gate to exactly 0 or 1.
torch::Tensor open_sigmoid(const torch::Tensor& logits) { return torch::sigmoid(logits.clamp(-16.0, 16.0)); }

torch::Tensor apply_activation(const torch::Tensor& x, Activation a, double slope) {
  return a == Activation::kRelu ? torch::relu(x) : torch::leaky_relu(x, slope);
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int in_channels, int planes, int stride, bool bottleneck,
                                     const ExtractorConfig& cfg)
    : bottleneck_(bottleneck), activation_(cfg.activation), slope_(cfg.leaky_slope) {
  const int out_channels = bottleneck ? planes * 4 : planes;
  if (bottleneck) {
    conv1_ = register_module("conv1", conv(in_channels, planes, 1, 1, 0));
    bn1_ = register_module("bn1", nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, stride, 1));
    bn2_ = register_module("bn2", nn::BatchNorm2d(planes));
    conv3_ = register_module("conv3", conv(planes, out_channels, 1, 1, 0));
    bn3_ = register_module("bn3", nn::BatchNorm2d(out_channels));
  } else {
    conv1_ = register_module("conv1", conv(in_channels, planes, 3, stride, 1));
    bn1_ = register_module("bn1", nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, 1, 1));
    bn2_ = register_module("bn2", nn::BatchNorm2d(planes));
  }
  if (stride != 1 || in_channels != out_channels) {
    downsample_ = register_module(
        "downsample", nn::Sequential(conv(in_channels, out_channels, 1, stride, 0), nn::BatchNorm2d(out_channels)));
  }
}

torch::Tensor ResidualBlockImpl::act(const torch::Tensor& x) const { return apply_activation(x, activation_, slope_); }

torch::Tensor ResidualBlockImpl::forward(torch::Tensor x) {
  torch::Tensor identity = downsample_ ? downsample_->forward(x) : x;
  torch::Tensor out = act(bn1_(conv1_(x)));
  if (bottleneck_) {
    out = act(bn2_(conv2_(out)));
    out = bn3_(conv3_(out));
  } else {
    out = bn2_(conv2_(out));
  }
  return act(out + identity);
}

ChannelGateImpl::ChannelGateImpl(int channels, int reduction) {
  const int hidden = std::max(1, channels / reduction);
  fc1_ = register_module("fc1", conv(channels, hidden, 1, 1, 0));
  fc2_ = register_module("fc2", conv(hidden, channels, 1, 1, 0));
}

torch::Tensor ChannelGateImpl::forward(const torch::Tensor& x) {
  auto mlp = [&](const torch::Tensor& d) { return fc2_(torch::relu(fc1_(d))); };
  const auto avg = torch::adaptive_avg_pool2d(x, {1, 1});
  const auto mx = torch::adaptive_max_pool2d(x, {1, 1});
  return open_sigmoid(mlp(avg) + mlp(std::get<0>(mx)));
}

void ChannelGateImpl::zero_output_layer() {
  torch::NoGradGuard ng;
  fc2_->weight.zero_();
}

SpatialGateImpl::SpatialGateImpl(int kernel) {
  conv_ = register_module("conv", conv(2, 1, kernel, 1, kernel / 2));
}

torch::Tensor SpatialGateImpl::forward(const torch::Tensor& x) {
  const auto avg = x.mean(1, true);
  const auto mx = std::get<0>(x.max(1, true));
  return open_sigmoid(conv_(torch::cat({avg, mx}, 1)));
}

void SpatialGateImpl::zero_output_layer() {
  torch::NoGradGuard ng;
  conv_->weight.zero_();
}

ConsultNetImpl::ConsultNetImpl(const ExtractorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const bool bottleneck = cfg_.backbone_depth == 50;
  const std::vector<int> blocks = bottleneck ? std::vector<int>{3, 4, 6, 3} : std::vector<int>{2, 2, 2, 2};
  const int w = cfg_.base_width;

  conv1_ = register_module("conv1", conv(3, w, 7, 2, 3));
  bn1_ = register_module("bn1", nn::BatchNorm2d(w));

  int in_channels = w;
  for (int s = 1; s <= cfg_.max_stage(); ++s) {
    const int planes = w * (1 << (s - 1));
    const int stride = s == 1 ? 1 : 2;
    nn::Sequential layer;
    for (int b = 0; b < blocks[static_cast<std::size_t>(s - 1)]; ++b) {
      layer->push_back(ResidualBlock(in_channels, planes, b == 0 ? stride : 1, bottleneck, cfg_));
      in_channels = bottleneck ? planes * 4 : planes;
    }
    layers_.push_back(register_module("layer" + std::to_string(s), layer));
  }

  if (cfg_.use_attention) {
    for (int s : cfg_.stages_used) {
      const int c = cfg_.stage_channels(s);
      channel_gates_.push_back(
          register_module("attention" + std::to_string(s) + "_channel", ChannelGate(c, cfg_.attention_reduction)));
      spatial_gates_.push_back(
          register_module("attention" + std::to_string(s) + "_spatial", SpatialGate(cfg_.spatial_kernel)));
    }
  }
}

torch::Tensor ConsultNetImpl::act(const torch::Tensor& x) const {
  return apply_activation(x, cfg_.activation, cfg_.leaky_slope);
}

std::vector<torch::Tensor> ConsultNetImpl::trunk(const torch::Tensor& x) {
  TORCH_CHECK(x.dim() == 4 && x.size(1) == 1, "expected [B,1,H,W] input");
  auto h = (x / 255.0 - kInputMean) / kInputStd;
  h = h.expand({-1, 3, -1, -1});
  h = act(bn1_(conv1_(h)));
  h = torch::max_pool2d(h, 3, 2, 1);
  std::vector<torch::Tensor> outs;
  for (auto& layer : layers_) {
    h = layer->forward(h);
    outs.push_back(h);
  }
  return outs;
}

std::vector<StageOutput> ConsultNetImpl::forward(const torch::Tensor& x) {
  const auto maps = trunk(x);
  std::vector<StageOutput> outs;
  for (std::size_t i = 0; i < cfg_.stages_used.size(); ++i) {
    const int s = cfg_.stages_used[i];
    StageOutput o;
    o.stage = s;
    const auto& m = maps[static_cast<std::size_t>(s - 1)];
    if (cfg_.use_attention) {
      o.channel_gate = channel_gates_[i]->forward(m);
      const auto refined = m * o.channel_gate;
      o.spatial_gate = spatial_gates_[i]->forward(refined);
      o.features = refined * o.spatial_gate;
    } else {
      o.features = m;
    }
    outs.push_back(std::move(o));
  }
  return outs;
}

std::vector<nn::BatchNorm2dImpl*> ConsultNetImpl::batchnorms() {
  std::vector<nn::BatchNorm2dImpl*> out;
  for (const auto& m : modules(/*include_self=*/false))
    if (auto* bn = m->as<nn::BatchNorm2d>()) out.push_back(bn);
  return out;
}

void ConsultNetImpl::reset_parameters(std::uint64_t seed) {
  torch::NoGradGuard ng;
  torch::manual_seed(seed);
  for (const auto& m : modules(false)) {
    if (auto* c = m->as<nn::Conv2d>()) {
      // ReLU gain regardless of activation so the Leaky-ReLU swap reuses identical weights.
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
      bn->reset_running_stats();
    }
  }
  for (auto& g : channel_gates_) g->zero_output_layer();
  for (auto& g : spatial_gates_) g->zero_output_layer();
}

}  // namespace consult::extractor
