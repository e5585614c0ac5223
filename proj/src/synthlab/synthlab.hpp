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
#include <optional>
#include <span>
#include <vector>

#include "synthlab/image.hpp"

// Stage-1 training corpus synthesis: foreground localisation, Bezier-hull
// pseudo-tumours and healthy-image augmentation.
namespace consult::synthlab {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct BrainParams {
  // Binary threshold; unset means Otsu over the nonzero pixels.
  std::optional<int> threshold;
  int morph_radius = 5;
};

// Foreground ("brain") mask: threshold, closing then opening with a disk,
// keep the largest 8-connected component. If morphology removes everything
// the closed, then the raw, threshold mask is used instead; the result is
// empty only when no pixel exceeds the threshold.
DefectMask locate_brain(const GrayImage& img, const BrainParams& params = {});

// Otsu threshold computed over the nonzero pixels only.
int otsu_nonzero(const GrayImage& img);

// Closed polygon through the control points: points are ordered by polar
// angle about their centroid and each consecutive pair is joined by a cubic
// Bezier whose inner control points sit at 1/3 and 2/3 of the chord, pushed
// outward by edginess * chord length. Every control point appears verbatim
// in the output (at t = 0 of its outgoing segment).
std::vector<Point2> bezier_hull(std::span<const Point2> points, double edginess,
                                int samples_per_segment = 32);

// Scanline fill of a closed polygon into a mask of the given shape.
DefectMask rasterize_polygon(std::span<const Point2> polygon, int height, int width);

struct DefectSpec {
  int n_control = 5;
  double edginess = 0.05;
  // Noise statistics; unset means drawn per defect: mu ~ randint(0, 255),
  // sigma ~ uniform(10, 20).
  std::optional<double> mu;
  std::optional<double> sigma;
  int noise_base_shape = 15;
  int samples_per_segment = 32;
  // Minimum control-point spacing as a fraction of the brain bbox diagonal.
  double min_sep_fraction = 0.05;
  BrainParams brain;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct DefectResult {
  GrayImage image;
  DefectMask mask;
  std::vector<Point2> control_points;
  double mu = 0.0;
  double sigma = 0.0;
};

// Inpaints one Bezier-hull Gaussian-noise defect inside the foreground.
// Deterministic in spec.rng_seed; img is not modified.
DefectResult generate_defect(const GrayImage& img, const DefectSpec& spec);

struct AugmentParams {
  double probability = 0.5;
  double elastic_std = 3.0;      // px, std of the displacement field
  double elastic_smooth = 10.0;  // px, Gaussian smoothing sigma
  int grid_cells = 5;
  double grid_jitter = 0.1;
  double gain_min = 0.8, gain_max = 1.2;
  double bias_min = -20.0, bias_max = 20.0;

  void validate() const;
};

// The random draws for one augmentation, separated from their application so
// a given draw can be replayed.
struct AugmentPlan {
  bool elastic = false;
  bool grid = false;
  bool flip = false;
  bool intensity = false;
  std::uint64_t elastic_seed = 0;
  std::vector<double> grid_steps_x;
  std::vector<double> grid_steps_y;
  double gain = 1.0;
  double bias = 0.0;

  bool is_identity() const { return !elastic && !grid && !flip && !intensity; }
};

AugmentPlan plan_augmentation(std::uint64_t rng_seed, const AugmentParams& params = {});
GrayImage apply_augmentation(const GrayImage& img, const AugmentPlan& plan,
                             const AugmentParams& params = {});
GrayImage augment_normal(const GrayImage& img, std::uint64_t rng_seed,
                         const AugmentParams& params = {});

enum class Provenance { kOriginal, kAugmented, kDefect };

const char* to_string(Provenance p);

struct NormalSample {
  GrayImage image;
  Provenance provenance = Provenance::kOriginal;
  std::uint64_t seed = 0;
  // Index into PairedDataset::normals of the image this one was derived from;
  // an original refers to itself.
  int source = 0;
};

struct AnomalousSample {
  GrayImage image;
  DefectMask mask;
  std::uint64_t seed = 0;
  int source = 0;  // index into normals
};

// D_G = originals (flagged) followed by their augmentations; D_B = defects.
struct PairedDataset {
  std::vector<NormalSample> normals;
  std::vector<AnomalousSample> anomalous;

  std::size_t original_count() const;
  std::vector<int> original_indices() const;
  std::vector<int> augmented_indices() const;
};

PairedDataset build_pair_dataset(std::span<const GrayImage> few, int n_normal_aug, int n_anomalous,
                                 const DefectSpec& spec, std::uint64_t rng_seed,
                                 const AugmentParams& aug = {});

// Writes every sample as PNG plus manifest.json.
void write_dataset(const PairedDataset& ds, const std::filesystem::path& out_dir);

}  // namespace consult::synthlab
