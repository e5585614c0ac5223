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
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "common/digest.hpp"
#include "common/feature_grid.hpp"
#include "extractor/extractor.hpp"
#include "synthlab/image.hpp"

// Detection head: coreset memory bank of healthy patch features, reweighted
// nearest-neighbour scoring and thresholding.
namespace consult::bank {

struct SourceIndex {
  int image = 0;  // position in the few-shot list the bank was built from
  int cell = 0;   // row-major cell index in that image's feature grid
};

struct MemoryBank {
  int dim = 0;
  std::vector<float> vectors;  // count x dim
  std::vector<SourceIndex> sources;
  int k_neighbors = 9;
  double sampling_ratio = 0.10;
  Digest extractor_fingerprint{};
  int grid_height = 0;
  int grid_width = 0;

  std::size_t size() const { return sources.size(); }
  std::span<const float> vector(std::size_t i) const {
    return {vectors.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }

  // Binary layout: "CSLT", version u32, D u32, count u32, k u32, ratio f64,
  // fingerprint[32], count*D little-endian f32, JSON trailer.
  void save(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);
};

// Row-major point set view.
struct PointSet {
  std::span<const float> data;
  int dim = 0;
  std::size_t size() const { return dim > 0 ? data.size() / static_cast<std::size_t>(dim) : 0; }
  std::span<const float> point(std::size_t i) const {
    return data.subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
  }
};

// Greedy farthest-point (k-center) selection: starts at start_index, then
// repeatedly adds the point farthest from the selected set (lowest index on
// ties).
std::vector<int> greedy_coreset(const PointSet& points, std::size_t count, std::size_t start_index);

// Largest Euclidean distance from any point to its nearest selected point.
double covering_radius(const PointSet& points, std::span<const int> selected);

void validate_bank_params(double sampling_ratio, int k_neighbors);

// Pools every patch feature of the few-shot images and keeps a coreset of
// ceil(ratio * |M|) of them. Start point drawn from seed.
MemoryBank build_bank(std::span<const synthlab::GrayImage> few, extractor::Extractor& model, double sampling_ratio,
                      int k_neighbors, std::uint64_t seed);

// Same, from precomputed grids (one per image).
MemoryBank build_bank_from_grids(std::span<const PatchFeatureGrid> grids, double sampling_ratio, int k_neighbors,
                                 std::uint64_t seed, const Digest& fingerprint);

struct AnomalyMap {
  int height = 0;  // grid
  int width = 0;
  std::vector<float> scores;  // raw per-cell squared NN distance
  double image_score = 0.0;   // reweighted max
  double raw_score = 0.0;     // max(scores)
  double reweight = 0.0;      // factor applied to raw_score
  int argmax_cell = 0;
  extractor::HeatMap upsampled;  // image resolution, blurred
};

struct NearestNeighbour {
  int index = -1;
  double distance = std::numeric_limits<double>::infinity();  // squared
};
NearestNeighbour nearest(const MemoryBank& bank, std::span<const float> query);

// 1 - e^{s*} / sum_{m in N_k(m*)} e^{d(x*, m)}, max-shifted.
double reweight_factor(const MemoryBank& bank, std::span<const float> query, int nearest_index);

// Scores a feature grid; upsampled map is produced when out_height > 0.
AnomalyMap score_grid(const PatchFeatureGrid& grid, const MemoryBank& bank, int out_height = 0, int out_width = 0);

// Refuses to score when the bank was built by a different extractor.
AnomalyMap score_image(const synthlab::GrayImage& img, const MemoryBank& bank, extractor::Extractor& model);

struct Decision {
  double tau = 0.0;
  bool is_anomaly = false;
};

Decision decide(const AnomalyMap& map, double tau);

// Empirical q-quantile with linear interpolation between order statistics.
double calibrate_tau(std::span<const double> healthy_scores, double q = 0.99);

// Query image blended with a colour-mapped upsampled score map, as PNG.
void write_heatmap_overlay(const std::filesystem::path& path, const synthlab::GrayImage& img, const AnomalyMap& map);

}  // namespace consult::bank
