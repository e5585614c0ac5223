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

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bank/bank.hpp"
#include "extractor/extractor.hpp"
#include "harness/audit.hpp"
#include "harness/config.hpp"
#include "harness/metrics.hpp"
#include "trainer/trainer.hpp"

namespace consult::harness {

// Sorted *.png files of a directory; DataError when missing or empty.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Stage-1 corpus for one epoch: augmentations and synthetic defects of the
// shots, seeded by (experiment seed, epoch).
synthlab::PairedDataset epoch_corpus(const ExperimentConfig& cfg, std::span<const synthlab::GrayImage> few, int epoch);

struct PreparedExtractor {
  std::unique_ptr<extractor::Extractor> model;
  std::vector<trainer::EpochStats> stats;
};

// Seeded extractor with BatchNorm statistics calibrated on the shots (unless
// a pretrained trunk is configured), then fine-tuned unless skip_stage1.
// Training artefacts go to out_dir when nonempty.
PreparedExtractor prepare_extractor(const ExperimentConfig& cfg, std::span<const synthlab::GrayImage> few,
                                    const std::filesystem::path& out_dir);

struct ExperimentResult {
  MetricsReport report;
  std::vector<trainer::EpochStats> stats;
  extractor::WeightSet weights;
  bank::MemoryBank bank;
  std::vector<std::string> few_shot_files;
  DataConfig data;  // resolved (phantom corpora point at their directories)
  std::vector<AccessAudit::Access> accesses;
};

// split -> synth -> stage-1 training -> bank from the K shots -> score the
// test split -> AUROC. Writes metrics.json, manifest.json, epoch_stats.csv,
// weights, bank and heatmaps under out_dir. A failing stage writes
// failure.json and rethrows with the stage name prefixed.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// Ablation grid: explicit rows (override objects) crossed with cartesian
// axes. Override keys are dotted config paths, e.g. "train.loss".
struct SweepGrid {
  std::vector<nlohmann::json> rows;
  std::vector<std::pair<std::string, std::vector<nlohmann::json>>> axes;

  // Expanded cells, rows outermost, last axis fastest.
  std::vector<nlohmann::json> cells() const;
};

// {"preset": "loss" | "model", "rows": [...], "axes": {"key": [values]}}.
// Presets add the loss-function or backbone ablation layout.
SweepGrid sweep_grid_from_json(const nlohmann::json& j);
SweepGrid loss_ablation_grid();
SweepGrid model_ablation_grid();

struct SweepCell {
  nlohmann::json overrides;
  std::string config_hash;  // empty if the config did not resolve
  std::optional<MetricsReport> report;
  std::string error;
  int error_code = 0;  // exit-code convention; 0 on success
};

// One run_experiment per cell under out_dir/cell_NNN; failures are recorded
// and the sweep continues. Writes sweep.csv (one line per cell) and
// sweep_table.csv (switches x K, median AUROC over seeds).
std::vector<SweepCell> sweep_ablation(const nlohmann::json& base_config, const SweepGrid& grid,
                                      const std::filesystem::path& out_dir);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepCell>& cells);
void write_sweep_table(const std::filesystem::path& path, const std::vector<SweepCell>& cells);

}  // namespace consult::harness
