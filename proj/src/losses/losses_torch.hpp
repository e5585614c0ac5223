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

#include <torch/torch.h>

#include "losses/losses.hpp"

// Differentiable batch forms of the objectives. Feature tensors are
// [B,D,H,W]; masks are [B,H,W] booleans; per-sample results are [B].
namespace consult::losses::autograd {

struct Distances {
  torch::Tensor d_pull;
  torch::Tensor d_push;
  torch::Tensor push_count;  // masked cells per sample
};

Distances masked_distances(const torch::Tensor& anchor, const torch::Tensor& positive, const torch::Tensor& negative,
                           const torch::Tensor& neg_mask);

torch::Tensor anchor_loss(const torch::Tensor& d_pull, const torch::Tensor& d_push, const AnchorParams& p);
torch::Tensor tritanh_loss(const torch::Tensor& d_pull, const torch::Tensor& d_push, const TritanhParams& p);
torch::Tensor ssl_loss(const torch::Tensor& anchor);
torch::Tensor koleo_loss(const torch::Tensor& anchor, const SfaParams& p);

}  // namespace consult::losses::autograd
