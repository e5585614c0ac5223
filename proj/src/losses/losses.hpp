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
#include <span>

#include "common/feature_grid.hpp"
#include "nlohmann/json.hpp"

// Contrastive and feature-adversarial objectives, scalar reference forms.
// Tensor forms used during training live in losses/losses_torch.hpp and are
// checked against these.
namespace consult::losses {

// Exponent arguments above this are clamped before exponentiation.
inline constexpr double kExpClamp = 80.0;

struct TritanhParams {
  double lambda0 = 2.0;
  double lambda1 = 1.0;
  double m0 = 1.0;
  double m1 = 1.0;

  void validate() const;
};

struct AnchorParams {
  double alpha0 = 1.0;
  double alpha1 = 1.0;
  double m = 1.0;

  void validate() const;
};

struct SfaParams {
  double gamma1 = 0.01;
  double gamma2 = 0.01;
  double eps = 1e-8;

  void validate() const;
};

struct ContrastiveDistances {
  double d_pull = 0.0;
  double d_push = 0.0;
  int pull_count = 0;
  int push_count = 0;
};

// d_pull: mean over all cells of |positive - anchor|^2 / D.
// d_push: mean over masked cells of |negative - anchor|^2 / D.
// neg_mask holds one byte per cell. Throws DataError when the mask is empty
// ("defect vanished at feature resolution").
ContrastiveDistances masked_distances(const PatchFeatureGrid& anchor, const PatchFeatureGrid& positive,
                                      const PatchFeatureGrid& negative, std::span<const std::uint8_t> neg_mask);

// max(0, alpha0 * d_pull - alpha1 * d_push + m)
double anchor_loss(const ContrastiveDistances& d, const AnchorParams& p);

// (e^{l0 dpull} - e^{l1 dpush} + m0) / (e^{l0 dpull} + e^{l1 dpush} + m1)
double tritanh_loss(const ContrastiveDistances& d, const TritanhParams& p);

struct Gradient2 {
  double d_pull = 0.0;
  double d_push = 0.0;
};
Gradient2 tritanh_gradient(const ContrastiveDistances& d, const TritanhParams& p);
Gradient2 anchor_gradient(const ContrastiveDistances& d, const AnchorParams& p);

// Number of exponent clamps since process start.
std::uint64_t tritanh_clamp_events();

// Mean pairwise squared distance / D over distinct cell pairs, via the
// centred closed form 2 * sum |x_i - mean|^2 / ((N - 1) D).
double ssl_loss(const PatchFeatureGrid& anchor);

// -(1/n) sum log(|f_i| + eps) over the grid cells.
double koleo_loss(const PatchFeatureGrid& features, const SfaParams& p);

double sfa_loss(const PatchFeatureGrid& anchor, const SfaParams& p);

double total_loss(const ContrastiveDistances& d, const PatchFeatureGrid& anchor, const TritanhParams& tp,
                  const SfaParams& sp);

nlohmann::json to_json(const TritanhParams& p);
nlohmann::json to_json(const AnchorParams& p);
nlohmann::json to_json(const SfaParams& p);
TritanhParams tritanh_params_from_json(const nlohmann::json& j);
AnchorParams anchor_params_from_json(const nlohmann::json& j);
SfaParams sfa_params_from_json(const nlohmann::json& j);

}  // namespace consult::losses
