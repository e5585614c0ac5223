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

#include "harness/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "synthlab/synthlab.hpp"

namespace consult::harness {

using synthlab::DefectMask;
using synthlab::GrayImage;

namespace {

constexpr double kRimStart = 0.90;

struct Head {
  double cx, cy, a, b, cos_r, sin_r;
  // Normalised elliptical radius and polar angle of pixel (x, y).
  std::pair<double, double> polar(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = cos_r * dx + sin_r * dy, v = -sin_r * dx + cos_r * dy;
    return {std::hypot(u / a, v / b), std::atan2(v / b, u / a)};
  }
};

cv::Mat smooth_noise(int size, int grid, double sigma, Rng& rng) {
  cv::Mat base(grid, grid, CV_32F);
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x) base.at<float>(y, x) = static_cast<float>(normal(rng, 0.0, sigma));
  cv::Mat out;
  cv::resize(base, out, cv::Size(size, size), 0, 0, cv::INTER_CUBIC);
  return out;
}

struct Phantom {
  Head head;
  cv::Mat tissue;  // float intensities
};

Phantom draw_phantom(int size, std::uint64_t seed) {
  if (size < 32) throw InvalidArgument("phantom size must be >= 32");
  Rng rng = make_rng(seed);
  const double s = size;
  Head h{};
  h.cx = s / 2 + uniform(rng, -0.02, 0.02) * s;
  h.cy = s / 2 + uniform(rng, -0.02, 0.02) * s;
  h.a = uniform(rng, 0.34, 0.37) * s;
  h.b = uniform(rng, 0.40, 0.43) * s;
  const double rot = uniform(rng, -0.1, 0.1);
  h.cos_r = std::cos(rot);
  h.sin_r = std::sin(rot);

  const double base = uniform(rng, 95.0, 115.0);
  const double rim = uniform(rng, 160.0, 190.0);
  const double freq = uniform(rng, 5.7, 6.3);
  const int lobes = static_cast<int>(uniform_int(rng, 6, 7));
  const double wobble = uniform(rng, 0.8, 1.0);
  const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double ridge = uniform(rng, 12.0, 20.0);
  const double vent_dx = uniform(rng, 0.06, 0.09) * s;
  const double vent_rx = uniform(rng, 0.035, 0.06) * s;
  const double vent_ry = uniform(rng, 0.09, 0.14) * s;
  const double vent_level = uniform(rng, 35.0, 55.0);
  const cv::Mat low = smooth_noise(size, 8, 6.0, rng);

  cv::Mat t(size, size, CV_32F);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto [rho, theta] = h.polar(x + 0.5, y + 0.5);
      double v;
      if (rho > 1.0) {
        v = normal(rng, 8.0, 4.0);
      } else if (rho >= kRimStart) {
        v = rim + normal(rng, 0.0, 4.0);
      } else {
        v = base + 20.0 * (1.0 - rho) +
            ridge * std::sin(2 * std::numbers::pi * freq * rho + wobble * std::sin(lobes * theta + phase)) +
            low.at<float>(y, x) + normal(rng, 0.0, 3.0);
        const double dx = x + 0.5 - h.cx, dy = y + 0.5 - h.cy;
        for (double side : {-1.0, 1.0}) {
          const double ex = (dx - side * vent_dx) / vent_rx, ey = dy / vent_ry;
          if (ex * ex + ey * ey <= 1.0) v = vent_level + normal(rng, 0.0, 3.0);
        }
      }
      t.at<float>(y, x) = static_cast<float>(v);
    }
  return {h, t};
}

GrayImage quantize(const cv::Mat& f) {
  GrayImage img(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x)
      img.at(y, x) = static_cast<std::uint8_t>(std::lround(std::clamp<double>(f.at<float>(y, x), 0.0, 255.0)));
  return img;
}

}  // namespace

PhantomSample phantom_healthy(int size, std::uint64_t seed) {
  const auto p = draw_phantom(size, seed);
  return {quantize(p.tissue), DefectMask(size, size)};
}

PhantomSample phantom_lesion(int size, std::uint64_t seed, std::uint64_t lesion_seed, const PhantomConfig& cfg) {
  auto p = draw_phantom(size, seed);
  Rng rng = make_rng(lesion_seed);
  const double s = size;

  // Lesion centre: uniform over the inner part of the head.
  double cx = 0, cy = 0;
  for (int attempt = 0;; ++attempt) {
    cx = uniform(rng, 0.0, s);
    cy = uniform(rng, 0.0, s);
    if (p.head.polar(cx, cy).first < 0.6) break;
    if (attempt > 10000) throw DataError("phantom: no room for a lesion");
  }
  const double radius = uniform(rng, cfg.lesion_radius_min, cfg.lesion_radius_max) * s;
  constexpr int kPoints = 7;
  std::vector<synthlab::Point2> ctrl;
  for (int i = 0; i < kPoints; ++i) {
    const double ang = 2 * std::numbers::pi * (i + uniform(rng, -0.3, 0.3)) / kPoints;
    const double r = radius * uniform(rng, 0.75, 1.25);
    ctrl.push_back({cx + r * std::cos(ang), cy + r * std::sin(ang)});
  }
  const auto hull = synthlab::bezier_hull(ctrl, 0.15);
  DefectMask mask = synthlab::rasterize_polygon(hull, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (mask.at(y, x) && p.head.polar(x + 0.5, y + 0.5).first >= kRimStart) mask.set(y, x, false);
  if (mask.area() == 0) throw DataError("phantom: lesion fell outside the head");

  const double sign = coin(rng) ? 1.0 : -1.0;
  const double contrast = sign * uniform(rng, cfg.lesion_contrast_min, cfg.lesion_contrast_max);
  const cv::Mat tex = smooth_noise(size, 6, cfg.lesion_sigma, rng);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (mask.at(y, x)) p.tissue.at<float>(y, x) += static_cast<float>(contrast) + tex.at<float>(y, x);
  return {quantize(p.tissue), std::move(mask)};
}

DataConfig write_phantom_corpus(const PhantomConfig& cfg, std::uint64_t seed, const std::filesystem::path& root) {
  cfg.validate();
  namespace fs = std::filesystem;
  DataConfig d;
  d.source = "directory";
  d.train_healthy_dir = root / "train" / "healthy";
  d.test_healthy_dir = root / "test" / "healthy";
  d.test_anomalous_dir = root / "test" / "anomalous";
  d.test_mask_dir = root / "test" / "masks";
  d.phantom = cfg;
  for (const auto& dir : {d.train_healthy_dir, d.test_healthy_dir, d.test_anomalous_dir, d.test_mask_dir})
    fs::create_directories(dir);
  char name[32];
  for (int i = 0; i < cfg.n_train_healthy; ++i) {
    std::snprintf(name, sizeof name, "%04d.png", i);
    synthlab::write_png(d.train_healthy_dir / name, phantom_healthy(cfg.size, derive_seed(seed, "phantom/train", i)).image);
  }
  for (int i = 0; i < cfg.n_test_healthy; ++i) {
    std::snprintf(name, sizeof name, "%04d.png", i);
    synthlab::write_png(d.test_healthy_dir / name,
                        phantom_healthy(cfg.size, derive_seed(seed, "phantom/test-healthy", i)).image);
  }
  for (int i = 0; i < cfg.n_test_anomalous; ++i) {
    std::snprintf(name, sizeof name, "%04d.png", i);
    const auto s = phantom_lesion(cfg.size, derive_seed(seed, "phantom/test-anomalous", i),
                                  derive_seed(seed, "phantom/lesion", i), cfg);
    synthlab::write_png(d.test_anomalous_dir / name, s.image);
    synthlab::write_mask_png(d.test_mask_dir / name, s.mask);
  }
  return d;
}

}  // namespace consult::harness
