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

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "synthlab/cv_bridge.hpp"
#include "synthlab/synthlab.hpp"

namespace consult::synthlab {

void AugmentParams::validate() const {
  if (probability < 0.0 || probability > 1.0) throw InvalidArgument("augment: probability must be in [0,1]");
  if (elastic_std < 0.0 || elastic_std > 4.0) throw InvalidArgument("augment: elastic_std must be in [0,4] px");
  if (elastic_smooth < 8.0) throw InvalidArgument("augment: elastic_smooth must be >= 8 px");
  if (grid_cells < 1 || grid_cells > 5) throw InvalidArgument("augment: grid_cells must be in [1,5]");
  if (grid_jitter < 0.0 || grid_jitter > 0.1) throw InvalidArgument("augment: grid_jitter must be in [0,0.1]");
  if (gain_min > gain_max || gain_min < 0.8 || gain_max > 1.2)
    throw InvalidArgument("augment: gain range must lie within [0.8,1.2]");
  if (bias_min > bias_max || bias_min < -20.0 || bias_max > 20.0)
    throw InvalidArgument("augment: bias range must lie within [-20,20]");
}

AugmentPlan plan_augmentation(std::uint64_t rng_seed, const AugmentParams& params) {
  params.validate();
  Rng rng = make_rng(rng_seed);
  AugmentPlan plan;
  plan.elastic = coin(rng, params.probability);
  plan.grid = coin(rng, params.probability);
  plan.flip = coin(rng, params.probability);
  plan.intensity = coin(rng, params.probability);

  plan.elastic_seed = rng();
  for (auto* steps : {&plan.grid_steps_x, &plan.grid_steps_y}) {
    steps->resize(static_cast<std::size_t>(params.grid_cells));
    for (auto& s : *steps) s = 1.0 + uniform(rng, -params.grid_jitter, params.grid_jitter);
  }
  plan.gain = uniform(rng, params.gain_min, params.gain_max);
  plan.bias = uniform(rng, params.bias_min, params.bias_max);
  return plan;
}

namespace {

cv::Mat elastic_distort(const cv::Mat& src, std::uint64_t seed, const AugmentParams& params) {
  Rng rng = make_rng(seed);
  cv::Mat dx(src.size(), CV_32F), dy(src.size(), CV_32F);
  for (auto* field : {&dx, &dy})
    for (int y = 0; y < src.rows; ++y)
      for (int x = 0; x < src.cols; ++x) field->at<float>(y, x) = static_cast<float>(uniform(rng, -1.0, 1.0));

  const int k = 2 * static_cast<int>(std::ceil(3.0 * params.elastic_smooth)) + 1;
  for (auto* field : {&dx, &dy}) {
    cv::GaussianBlur(*field, *field, cv::Size(k, k), params.elastic_smooth, params.elastic_smooth,
                     cv::BORDER_REFLECT);
    cv::Scalar mean, stddev;
    cv::meanStdDev(*field, mean, stddev);
    const double scale = stddev[0] > 0.0 ? params.elastic_std / stddev[0] : 0.0;
    *field = (*field - mean[0]) * scale;
  }

  cv::Mat map_x(src.size(), CV_32F), map_y(src.size(), CV_32F);
  for (int y = 0; y < src.rows; ++y)
    for (int x = 0; x < src.cols; ++x) {
      map_x.at<float>(y, x) = static_cast<float>(x) + dx.at<float>(y, x);
      map_y.at<float>(y, x) = static_cast<float>(y) + dy.at<float>(y, x);
    }
  cv::Mat out;
  cv::remap(src, out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_CONSTANT, 0);
  return out;
}

// Piecewise-linear source coordinate for each destination coordinate along one
// axis, given jittered cell widths.
std::vector<float> grid_axis(int length, const std::vector<double>& steps) {
  const std::size_t cells = steps.size();
  double total = 0.0;
  for (double s : steps) total += s;
  std::vector<double> src_knots(cells + 1, 0.0), dst_knots(cells + 1, 0.0);
  const double span = static_cast<double>(length - 1);
  for (std::size_t i = 1; i <= cells; ++i) {
    src_knots[i] = src_knots[i - 1] + steps[i - 1] / total * span;
    dst_knots[i] = span * static_cast<double>(i) / static_cast<double>(cells);
  }
  std::vector<float> map(static_cast<std::size_t>(length));
  std::size_t c = 0;
  for (int d = 0; d < length; ++d) {
    while (c + 1 < cells && d > dst_knots[c + 1]) ++c;
    const double t = (d - dst_knots[c]) / (dst_knots[c + 1] - dst_knots[c]);
    map[static_cast<std::size_t>(d)] = static_cast<float>(src_knots[c] + t * (src_knots[c + 1] - src_knots[c]));
  }
  return map;
}

cv::Mat grid_distort(const cv::Mat& src, const AugmentPlan& plan) {
  const auto mx = grid_axis(src.cols, plan.grid_steps_x);
  const auto my = grid_axis(src.rows, plan.grid_steps_y);
  cv::Mat map_x(src.size(), CV_32F), map_y(src.size(), CV_32F);
  for (int y = 0; y < src.rows; ++y)
    for (int x = 0; x < src.cols; ++x) {
      map_x.at<float>(y, x) = mx[static_cast<std::size_t>(x)];
      map_y.at<float>(y, x) = my[static_cast<std::size_t>(y)];
    }
  cv::Mat out;
  cv::remap(src, out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_CONSTANT, 0);
  return out;
}

}  // namespace

GrayImage apply_augmentation(const GrayImage& img, const AugmentPlan& plan, const AugmentParams& params) {
  if (plan.is_identity()) return img;
  cv::Mat cur = as_mat(img).clone();
  if (plan.elastic) cur = elastic_distort(cur, plan.elastic_seed, params);
  if (plan.grid) cur = grid_distort(cur, plan);
  if (plan.flip) cv::flip(cur, cur, 1);
  if (plan.intensity) {
    for (int y = 0; y < cur.rows; ++y) {
      auto* row = cur.ptr<std::uint8_t>(y);
      for (int x = 0; x < cur.cols; ++x) {
        const double v = plan.gain * row[x] + plan.bias;
        row[x] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return from_mat(cur);
}

GrayImage augment_normal(const GrayImage& img, std::uint64_t rng_seed, const AugmentParams& params) {
  return apply_augmentation(img, plan_augmentation(rng_seed, params), params);
}

}  // namespace consult::synthlab
