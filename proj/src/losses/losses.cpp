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

#include "losses/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "log/log.hpp"

#include "common/error.hpp"
#include "common/json_util.hpp"

namespace consult::losses {

namespace {

std::atomic<std::uint64_t> g_clamp_events{0};

double clamped_exp(double arg) {
  if (arg > kExpClamp) {
    g_clamp_events.fetch_add(1, std::memory_order_relaxed);
    log::debug("tritanh: exponent argument %g clamped to %g", arg, kExpClamp);
    arg = kExpClamp;
  }
  return std::exp(arg);
}

}  // namespace

void TritanhParams::validate() const {
  if (!(lambda0 > 0.0) || !(lambda1 > 0.0)) throw ConfigError("tritanh: lambda0 and lambda1 must be > 0");
  if (!(m0 >= 0.0) || !(m1 >= 0.0)) throw ConfigError("tritanh: margins must be >= 0");
  if (m0 > m1 + 2.0) throw ConfigError("tritanh: m0 <= m1 + 2 is required for a bounded loss");
}

void AnchorParams::validate() const {
  if (!(alpha0 > 0.0) || !(alpha1 > 0.0)) throw ConfigError("anchor: alpha0 and alpha1 must be > 0");
}

void SfaParams::validate() const {
  if (!(gamma1 >= 0.0) || !(gamma2 >= 0.0)) throw ConfigError("sfa: gamma1 and gamma2 must be >= 0");
  if (!(eps > 0.0)) throw ConfigError("sfa: eps must be > 0");
}

ContrastiveDistances masked_distances(const PatchFeatureGrid& anchor, const PatchFeatureGrid& positive,
                                      const PatchFeatureGrid& negative, std::span<const std::uint8_t> neg_mask) {
  if (!anchor.same_shape(positive) || !anchor.same_shape(negative))
    throw InvalidArgument("masked_distances: grids differ in shape");
  if (neg_mask.size() != static_cast<std::size_t>(anchor.cells()))
    throw InvalidArgument("masked_distances: mask does not match grid");
  if (anchor.dim <= 0 || anchor.cells() <= 0) throw InvalidArgument("masked_distances: empty grid");

  ContrastiveDistances d;
  double pull = 0.0, push = 0.0;
  for (int i = 0; i < anchor.cells(); ++i) {
    pull += squared_distance(positive.cell(i), anchor.cell(i));
    ++d.pull_count;
    if (neg_mask[static_cast<std::size_t>(i)]) {
      push += squared_distance(negative.cell(i), anchor.cell(i));
      ++d.push_count;
    }
  }
  if (d.push_count == 0) throw DataError("defect vanished at feature resolution");
  d.d_pull = pull / d.pull_count / anchor.dim;
  d.d_push = push / d.push_count / anchor.dim;
  return d;
}

double anchor_loss(const ContrastiveDistances& d, const AnchorParams& p) {
  return std::max(0.0, p.alpha0 * d.d_pull - p.alpha1 * d.d_push + p.m);
}

double tritanh_loss(const ContrastiveDistances& d, const TritanhParams& p) {
  const double a = clamped_exp(p.lambda0 * d.d_pull);
  const double b = clamped_exp(p.lambda1 * d.d_push);
  return (a - b + p.m0) / (a + b + p.m1);
}

Gradient2 tritanh_gradient(const ContrastiveDistances& d, const TritanhParams& p) {
  const double xa = p.lambda0 * d.d_pull, xb = p.lambda1 * d.d_push;
  const double a = std::exp(std::min(xa, kExpClamp));
  const double b = std::exp(std::min(xb, kExpClamp));
  const double den = a + b + p.m1;
  const double den2 = den * den;
  Gradient2 g;
  g.d_pull = xa > kExpClamp ? 0.0 : p.lambda0 * a * (2.0 * b + p.m1 - p.m0) / den2;
  g.d_push = xb > kExpClamp ? 0.0 : -p.lambda1 * b * (2.0 * a + p.m1 + p.m0) / den2;
  return g;
}

Gradient2 anchor_gradient(const ContrastiveDistances& d, const AnchorParams& p) {
  if (p.alpha0 * d.d_pull - p.alpha1 * d.d_push + p.m <= 0.0) return {};
  return {p.alpha0, -p.alpha1};
}

std::uint64_t tritanh_clamp_events() { return g_clamp_events.load(std::memory_order_relaxed); }

double ssl_loss(const PatchFeatureGrid& anchor) {
  const int n = anchor.cells();
  if (n < 2) throw InvalidArgument("ssl_loss: need at least 2 cells");
  const int dim = anchor.dim;
  std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
  for (int i = 0; i < n; ++i) {
    const auto c = anchor.cell(i);
    for (int k = 0; k < dim; ++k) mean[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
  }
  for (auto& m : mean) m /= n;
  double scatter = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto c = anchor.cell(i);
    for (int k = 0; k < dim; ++k) {
      const double v = c[static_cast<std::size_t>(k)] - mean[static_cast<std::size_t>(k)];
      scatter += v * v;
    }
  }
  return 2.0 * scatter / (static_cast<double>(n - 1) * dim);
}

double koleo_loss(const PatchFeatureGrid& features, const SfaParams& p) {
  const int n = features.cells();
  if (n < 1) throw InvalidArgument("koleo_loss: no feature vectors");
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (float v : features.cell(i)) sq += static_cast<double>(v) * v;
    acc += std::log(std::sqrt(sq) + p.eps);
  }
  return -acc / n;
}

double sfa_loss(const PatchFeatureGrid& anchor, const SfaParams& p) {
  double out = 0.0;
  if (p.gamma1 != 0.0) out += p.gamma1 * ssl_loss(anchor);
  if (p.gamma2 != 0.0) out += p.gamma2 * koleo_loss(anchor, p);
  return out;
}

double total_loss(const ContrastiveDistances& d, const PatchFeatureGrid& anchor, const TritanhParams& tp,
                  const SfaParams& sp) {
  return tritanh_loss(d, tp) + sfa_loss(anchor, sp);
}

nlohmann::json to_json(const TritanhParams& p) {
  return {{"lambda0", p.lambda0}, {"lambda1", p.lambda1}, {"m0", p.m0}, {"m1", p.m1}};
}
nlohmann::json to_json(const AnchorParams& p) { return {{"alpha0", p.alpha0}, {"alpha1", p.alpha1}, {"m", p.m}}; }
nlohmann::json to_json(const SfaParams& p) {
  return {{"gamma1", p.gamma1}, {"gamma2", p.gamma2}, {"eps", p.eps}};
}

TritanhParams tritanh_params_from_json(const nlohmann::json& j) {
  check_keys(j, {"lambda0", "lambda1", "m0", "m1"}, "tritanh");
  TritanhParams p;
  p.lambda0 = get_or(j, "lambda0", p.lambda0, "tritanh");
  p.lambda1 = get_or(j, "lambda1", p.lambda1, "tritanh");
  p.m0 = get_or(j, "m0", p.m0, "tritanh");
  p.m1 = get_or(j, "m1", p.m1, "tritanh");
  p.validate();
  return p;
}

AnchorParams anchor_params_from_json(const nlohmann::json& j) {
  check_keys(j, {"alpha0", "alpha1", "m"}, "anchor");
  AnchorParams p;
  p.alpha0 = get_or(j, "alpha0", p.alpha0, "anchor");
  p.alpha1 = get_or(j, "alpha1", p.alpha1, "anchor");
  p.m = get_or(j, "m", p.m, "anchor");
  p.validate();
  return p;
}

SfaParams sfa_params_from_json(const nlohmann::json& j) {
  check_keys(j, {"gamma1", "gamma2", "eps"}, "sfa");
  SfaParams p;
  p.gamma1 = get_or(j, "gamma1", p.gamma1, "sfa");
  p.gamma2 = get_or(j, "gamma2", p.gamma2, "sfa");
  p.eps = get_or(j, "eps", p.eps, "sfa");
  p.validate();
  return p;
}

}  // namespace consult::losses
