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

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace consult {

// Spatially indexed patch feature vectors, row-major over cells, each cell a
// contiguous D-vector.
struct PatchFeatureGrid {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<int> stage_dims;
  double spatial_scale = 1.0;  // input pixels per grid cell
  std::vector<float> values;

  PatchFeatureGrid() = default;
  PatchFeatureGrid(int h, int w, int d)
      : height(h), width(w), dim(d), values(static_cast<std::size_t>(h) * w * d, 0.0f) {}

  int cells() const noexcept { return height * width; }
  std::span<const float> cell(int i) const {
    return {values.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<float> cell(int i) {
    return {values.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<const float> cell(int y, int x) const { return cell(y * width + x); }

  bool same_shape(const PatchFeatureGrid& o) const {
    return height == o.height && width == o.width && dim == o.dim;
  }
  bool all_finite() const {
    for (float v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

}  // namespace consult
