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
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "synthlab/cv_bridge.hpp"
#include "synthlab/synthlab.hpp"

namespace consult::synthlab {

std::vector<Point2> bezier_hull(std::span<const Point2> points, double edginess,
                                int samples_per_segment) {
  if (points.size() < 3) throw InvalidArgument("bezier_hull: need at least 3 points");
  if (!(edginess >= 0.0)) throw InvalidArgument("bezier_hull: edginess must be >= 0");
  if (samples_per_segment < 1) throw InvalidArgument("bezier_hull: samples_per_segment must be >= 1");

  Point2 c{};
  for (const auto& p : points) {
    c.x += p.x;
    c.y += p.y;
  }
  c.x /= static_cast<double>(points.size());
  c.y /= static_cast<double>(points.size());

  std::vector<Point2> ordered(points.begin(), points.end());
  std::stable_sort(ordered.begin(), ordered.end(), [&](const Point2& a, const Point2& b) {
    return std::atan2(a.y - c.y, a.x - c.x) < std::atan2(b.y - c.y, b.x - c.x);
  });

  const std::size_t n = ordered.size();
  std::vector<Point2> poly;
  poly.reserve(n * static_cast<std::size_t>(samples_per_segment));
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 p0 = ordered[i];
    const Point2 p1 = ordered[(i + 1) % n];
    const double dx = p1.x - p0.x, dy = p1.y - p0.y;
    const double len = std::hypot(dx, dy);

    // Unit normal pointing away from the centroid.
    double nx = 0.0, ny = 0.0;
    if (len > 0.0) {
      nx = dy / len;
      ny = -dx / len;
      const double mx = 0.5 * (p0.x + p1.x) - c.x, my = 0.5 * (p0.y + p1.y) - c.y;
      if (nx * mx + ny * my < 0.0) {
        nx = -nx;
        ny = -ny;
      }
    }
    const double off = edginess * len;
    const Point2 c1{p0.x + dx / 3.0 + off * nx, p0.y + dy / 3.0 + off * ny};
    const Point2 c2{p0.x + 2.0 * dx / 3.0 + off * nx, p0.y + 2.0 * dy / 3.0 + off * ny};

    poly.push_back(p0);
    for (int s = 1; s < samples_per_segment; ++s) {
      const double t = static_cast<double>(s) / samples_per_segment;
      const double u = 1.0 - t;
      const double b0 = u * u * u, b1 = 3.0 * u * u * t, b2 = 3.0 * u * t * t, b3 = t * t * t;
      poly.push_back({b0 * p0.x + b1 * c1.x + b2 * c2.x + b3 * p1.x,
                      b0 * p0.y + b1 * c1.y + b2 * c2.y + b3 * p1.y});
    }
  }
  return poly;
}

DefectMask rasterize_polygon(std::span<const Point2> polygon, int height, int width) {
  DefectMask mask(height, width);
  const std::size_t n = polygon.size();
  if (n < 3) return mask;

  // Even-odd rule evaluated at pixel centres (x, y).
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    const double sy = static_cast<double>(y);
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2& a = polygon[i];
      const Point2& b = polygon[(i + 1) % n];
      if ((a.y <= sy && b.y > sy) || (b.y <= sy && a.y > sy)) {
        const double t = (sy - a.y) / (b.y - a.y);
        xs.push_back(a.x + t * (b.x - a.x));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k])));
      const int x1 = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1])));
      for (int x = x0; x <= x1; ++x) mask.set(y, x, true);
    }
  }
  return mask;
}

void DefectSpec::validate() const {
  if (n_control < 3) throw InvalidArgument("DefectSpec: n_control must be >= 3");
  if (!(edginess >= 0.0)) throw InvalidArgument("DefectSpec: edginess must be >= 0");
  if (sigma && !(*sigma > 0.0)) throw InvalidArgument("DefectSpec: sigma must be > 0");
  if (noise_base_shape < 1) throw InvalidArgument("DefectSpec: noise_base_shape must be >= 1");
  if (samples_per_segment < 1) throw InvalidArgument("DefectSpec: samples_per_segment must be >= 1");
  if (!(min_sep_fraction >= 0.0)) throw InvalidArgument("DefectSpec: min_sep_fraction must be >= 0");
}

namespace {

constexpr int kAttemptsPerPoint = 400;
constexpr int kSeparationRetries = 4;

struct BrainPixels {
  std::vector<int> xs, ys;
  double diagonal = 0.0;
};

BrainPixels collect(const DefectMask& brain) {
  BrainPixels bp;
  int x0 = brain.width(), y0 = brain.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < brain.height(); ++y)
    for (int x = 0; x < brain.width(); ++x)
      if (brain.at(y, x)) {
        bp.xs.push_back(x);
        bp.ys.push_back(y);
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (!bp.xs.empty()) bp.diagonal = std::hypot(x1 - x0 + 1.0, y1 - y0 + 1.0);
  return bp;
}

// Rejection-samples separated control points on foreground pixels; returns
// an empty vector if the budget runs out.
std::vector<Point2> sample_points(const BrainPixels& bp, int count, double min_sep, Rng& rng) {
  std::vector<Point2> pts;
  const double min_sep2 = min_sep * min_sep;
  const auto n = static_cast<std::int64_t>(bp.xs.size());
  while (static_cast<int>(pts.size()) < count) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttemptsPerPoint && !placed; ++attempt) {
      const auto i = static_cast<std::size_t>(uniform_int(rng, 0, n - 1));
      const Point2 cand{static_cast<double>(bp.xs[i]), static_cast<double>(bp.ys[i])};
      placed = std::all_of(pts.begin(), pts.end(), [&](const Point2& p) {
        const double dx = p.x - cand.x, dy = p.y - cand.y;
        return dx * dx + dy * dy >= min_sep2;
      });
      if (placed) pts.push_back(cand);
    }
    if (!placed) return {};
  }
  return pts;
}

}  // namespace

DefectResult generate_defect(const GrayImage& img, const DefectSpec& spec) {
  spec.validate();
  const DefectMask brain = locate_brain(img, spec.brain);
  const BrainPixels bp = collect(brain);
  if (bp.xs.empty()) throw DataError("no foreground found");

  Rng rng = make_rng(spec.rng_seed);
  // Both statistics are always drawn so overrides leave later draws unchanged.
  const double drawn_mu = static_cast<double>(uniform_int(rng, 0, 255));
  const double drawn_sigma = uniform(rng, 10.0, 20.0);
  DefectResult out;
  out.mu = spec.mu.value_or(drawn_mu);
  out.sigma = spec.sigma.value_or(drawn_sigma);

  double min_sep = spec.min_sep_fraction * bp.diagonal;
  for (int retry = 0; retry <= kSeparationRetries; ++retry, min_sep *= 0.5) {
    auto pts = sample_points(bp, spec.n_control, min_sep, rng);
    if (pts.empty()) continue;
    const auto hull = bezier_hull(pts, spec.edginess, spec.samples_per_segment);
    DefectMask mask = rasterize_polygon(hull, img.height(), img.width());
    // Strict containment: the curve may bulge past a concave foreground edge.
    for (std::size_t i = 0; i < mask.bits().size(); ++i) mask.bits()[i] &= brain.bits()[i];
    if (mask.area() == 0) continue;
    out.mask = std::move(mask);
    out.control_points = std::move(pts);
    break;
  }
  if (out.mask.area() == 0) throw DataError("brain region too small");

  const int g = spec.noise_base_shape;
  cv::Mat base(g, g, CV_32F);
  for (int y = 0; y < g; ++y)
    for (int x = 0; x < g; ++x) base.at<float>(y, x) = static_cast<float>(normal(rng, out.mu, out.sigma));
  cv::Mat noise;
  cv::resize(base, noise, cv::Size(img.width(), img.height()), 0, 0, cv::INTER_LINEAR);

  out.image = img;
  for (int y = 0; y < img.height(); ++y) {
    const float* row = noise.ptr<float>(y);
    for (int x = 0; x < img.width(); ++x) {
      if (!out.mask.at(y, x)) continue;
      const double v = std::clamp(static_cast<double>(row[x]), 0.0, 255.0);
      out.image.at(y, x) = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

}  // namespace consult::synthlab
