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
#include <functional>
#include <string>
#include <vector>

#include "common/rng.hpp"
#include "extractor/extractor.hpp"
#include "losses/losses.hpp"
#include "synthlab/synthlab.hpp"

namespace consult::trainer {

enum class ContrastiveLoss { kTritanh, kAnchor };

const char* to_string(ContrastiveLoss l);

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 4;
  int iters_per_epoch = 32;
  std::uint64_t seed = 0;
  ContrastiveLoss loss = ContrastiveLoss::kTritanh;
  bool use_ssl = true;
  bool use_koleo = true;
  losses::TritanhParams tritanh;
  losses::AnchorParams anchor;
  losses::SfaParams sfa;
  // Trunk stages excluded from updates: 0 = stem, 1..4 = residual stages.
  std::vector<int> frozen_prefix;
  int checkpoint_every = 0;  // epochs; 0 disables

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochStats {
  int epoch = 0;
  double total = 0.0;
  double contrastive = 0.0;  // Tritanh or anchor, per config
  double ssl = 0.0;
  double koleo = 0.0;
  double d_pull = 0.0;
  double d_push = 0.0;
  double grad_norm_mean = 0.0;
  double grad_norm_max = 0.0;
  double seconds = 0.0;
  int steps = 0;
  int skipped = 0;  // samples whose defect vanished at grid resolution

  bool finite() const;
};

// Indices into a PairedDataset.
struct Triple {
  int anchor = 0;    // normals, provenance original
  int positive = 0;  // normals, != anchor
  int negative = 0;  // anomalous
};

Triple sample_triple(const synthlab::PairedDataset& ds, Rng& rng);

// Partition downsample: pixel (y, x) belongs to cell (y * gh / H, x * gw / W);
// a cell is set iff any of its pixels is set. Returns gh * gw bytes.
std::vector<std::uint8_t> mask_to_grid(const synthlab::DefectMask& mask, int grid_height, int grid_width);

// Supplies the stage-1 corpus for a given epoch (may be fixed or regenerated).
using DatasetSource = std::function<const synthlab::PairedDataset&(int epoch)>;

struct TrainHooks {
  std::filesystem::path out_dir;  // checkpoints, stats CSV, NaN dumps; empty disables
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  extractor::WeightSet weights;
  std::vector<EpochStats> stats;
};

// Fine-tunes the extractor in place by minimising the configured objective
// over anchor / positive / negative triples.
TrainResult train_stage1(extractor::Extractor& model, const DatasetSource& source, const TrainConfig& cfg,
                         const TrainHooks& hooks = {});

// Builds a seeded extractor (BatchNorm statistics calibrated on the dataset
// originals when no pretrained trunk is configured) and trains it.
TrainResult train_stage1(const synthlab::PairedDataset& ds, const extractor::ExtractorConfig& cfg_e,
                         const TrainConfig& cfg_t, const TrainHooks& hooks = {});

void write_stats_csv(const std::filesystem::path& path, const std::vector<EpochStats>& stats);

}  // namespace consult::trainer
