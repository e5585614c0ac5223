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

#include "losses/losses_torch.hpp"

#include "common/error.hpp"

namespace consult::losses::autograd {

Distances masked_distances(const torch::Tensor& anchor, const torch::Tensor& positive, const torch::Tensor& negative,
                           const torch::Tensor& neg_mask) {
  TORCH_CHECK(anchor.sizes() == positive.sizes() && anchor.sizes() == negative.sizes(), "grids differ in shape");
  TORCH_CHECK(neg_mask.dim() == 3 && neg_mask.size(0) == anchor.size(0) && neg_mask.size(1) == anchor.size(2) &&
                  neg_mask.size(2) == anchor.size(3),
              "mask does not match grid");
  const double dim = static_cast<double>(anchor.size(1));
  const auto pull_sq = (positive - anchor).pow(2).sum(1);  // [B,H,W]
  const auto push_sq = (negative - anchor).pow(2).sum(1);
  const auto mask = neg_mask.to(anchor.scalar_type());
  Distances d;
  d.push_count = mask.sum({1, 2});
  if ((d.push_count == 0).any().item<bool>()) throw DataError("defect vanished at feature resolution");
  d.d_pull = pull_sq.mean({1, 2}) / dim;
  d.d_push = (push_sq * mask).sum({1, 2}) / d.push_count / dim;
  return d;
}

torch::Tensor anchor_loss(const torch::Tensor& d_pull, const torch::Tensor& d_push, const AnchorParams& p) {
  return torch::relu(p.alpha0 * d_pull - p.alpha1 * d_push + p.m);
}

torch::Tensor tritanh_loss(const torch::Tensor& d_pull, const torch::Tensor& d_push, const TritanhParams& p) {
  const auto a = torch::exp(torch::clamp_max(p.lambda0 * d_pull, kExpClamp));
  const auto b = torch::exp(torch::clamp_max(p.lambda1 * d_push, kExpClamp));
  return (a - b + p.m0) / (a + b + p.m1);
}

torch::Tensor ssl_loss(const torch::Tensor& anchor) {
  const auto n = anchor.size(2) * anchor.size(3);
  TORCH_CHECK(n >= 2, "ssl_loss: need at least 2 cells");
  const auto flat = anchor.flatten(2);  // [B,D,N]
  const auto centred = flat - flat.mean(2, true);
  const double denom = static_cast<double>(n - 1) * static_cast<double>(anchor.size(1));
  return 2.0 * centred.pow(2).sum({1, 2}) / denom;
}

torch::Tensor koleo_loss(const torch::Tensor& anchor, const SfaParams& p) {
  const auto norms = anchor.pow(2).sum(1).clamp_min(1e-24).sqrt();  // [B,H,W]
  return -torch::log(norms + p.eps).mean({1, 2});
}

}  // namespace consult::losses::autograd
