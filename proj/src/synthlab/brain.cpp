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

#include <array>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "common/error.hpp"
#include "synthlab/cv_bridge.hpp"
#include "synthlab/synthlab.hpp"

namespace consult::synthlab {

int otsu_nonzero(const GrayImage& img) {
  std::array<double, 256> hist{};
  double total = 0.0;
  for (auto p : img.pixels()) {
    if (p == 0) continue;
    hist[p] += 1.0;
    total += 1.0;
  }
  if (total == 0.0) return 0;

  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

  double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
  int best = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      best = t;
    }
  }
  return best;
}

DefectMask locate_brain(const GrayImage& img, const BrainParams& params) {
  if (img.empty()) throw InvalidArgument("locate_brain: empty image");
  if (params.morph_radius < 0) throw InvalidArgument("locate_brain: morph_radius must be >= 0");

  const int threshold = params.threshold.value_or(otsu_nonzero(img));

  cv::Mat raw;
  cv::threshold(as_mat(img), raw, threshold, 1, cv::THRESH_BINARY);
  DefectMask mask(img.height(), img.width());
  if (cv::countNonZero(raw) == 0) return mask;

  // Opening can erase a thin foreground entirely; fall back to the closed,
  // then the raw, threshold mask so that the result is empty only when no
  // pixel exceeds the threshold.
  std::vector<cv::Mat> candidates;
  if (params.morph_radius > 0) {
    const int k = 2 * params.morph_radius + 1;
    const cv::Mat disk = cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(k, k));
    cv::Mat closed, opened;
    cv::morphologyEx(raw, closed, cv::MORPH_CLOSE, disk);
    cv::morphologyEx(closed, opened, cv::MORPH_OPEN, disk);
    candidates = {opened, closed};
  }
  candidates.push_back(raw);

  for (const auto& fg : candidates) {
    cv::Mat labels, stats, centroids;
    const int n = cv::connectedComponentsWithStats(fg, labels, stats, centroids, 8, CV_32S);
    int best = 0, best_area = 0;
    for (int i = 1; i < n; ++i) {
      const int area = stats.at<int>(i, cv::CC_STAT_AREA);
      if (area > best_area) {
        best_area = area;
        best = i;
      }
    }
    if (best == 0) continue;
    for (int y = 0; y < img.height(); ++y) {
      const int* row = labels.ptr<int>(y);
      for (int x = 0; x < img.width(); ++x) mask.set(y, x, row[x] == best);
    }
    break;
  }
  return mask;
}

}  // namespace consult::synthlab
