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
#include <string>

#include "bank/bank.hpp"
#include "common/digest.hpp"
#include "extractor/config.hpp"
#include "nlohmann/json.hpp"
#include "synthlab/synthlab.hpp"
#include "trainer/trainer.hpp"

namespace consult::harness {

// Procedural surrogate corpus ("phantom brains").
struct PhantomConfig {
  int size = 128;
  std::uint64_t corpus_seed = 20240;  // fixed across experiment seeds
  int n_train_healthy = 100;
  int n_test_healthy = 25;
  int n_test_anomalous = 25;
  // Test lesions: intensity offset from local tissue and texture noise.
  double lesion_contrast_min = 25.0;
  double lesion_contrast_max = 60.0;
  double lesion_sigma = 6.0;
  double lesion_radius_min = 0.06;  // fraction of image size
  double lesion_radius_max = 0.14;

  void validate() const;
};

// Image locations. With source "phantom" the corpus is generated under
// <out_dir>/phantom and then read back through the same path as real data.
struct DataConfig {
  std::string source = "phantom";  // "phantom" | "directory"
  std::filesystem::path train_healthy_dir;
  std::filesystem::path test_healthy_dir;
  std::filesystem::path test_anomalous_dir;
  std::filesystem::path test_mask_dir;  // optional, masks named as their images
  int image_size = 0;                   // resize square when > 0
  PhantomConfig phantom;

  void validate() const;
};

struct SynthConfig {
  int n_normal_aug = 16;
  int n_anomalous = 16;
  bool regenerate_each_epoch = true;
  synthlab::DefectSpec defect;
  synthlab::AugmentParams augment;

  void validate() const;
};

struct BankConfig {
  double sampling_ratio = 0.10;
  int k_neighbors = 9;
  double tau_quantile = 0.99;
  int tau_samples = 16;  // augmented healthy images scored for the threshold

  void validate() const;
};

struct ExperimentConfig {
  int shots = 2;
  std::uint64_t seed = 0;
  bool skip_stage1 = false;  // frozen-backbone baseline
  int heatmaps = 4;          // overlays written per run
  DataConfig data;
  SynthConfig synth;
  extractor::ExtractorConfig extractor;
  trainer::TrainConfig train;
  BankConfig bank;

  void validate() const;
};

nlohmann::json to_json(const PhantomConfig& c);
nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const SynthConfig& c);
nlohmann::json to_json(const BankConfig& c);
nlohmann::json to_json(const ExperimentConfig& c);
nlohmann::json to_json(const synthlab::DefectSpec& s);
nlohmann::json to_json(const synthlab::AugmentParams& a);

synthlab::DefectSpec defect_spec_from_json(const nlohmann::json& j);
synthlab::AugmentParams augment_params_from_json(const nlohmann::json& j);
PhantomConfig phantom_config_from_json(const nlohmann::json& j);
DataConfig data_config_from_json(const nlohmann::json& j);
SynthConfig synth_config_from_json(const nlohmann::json& j);
BankConfig bank_config_from_json(const nlohmann::json& j);
// Missing sections take defaults; the training seed follows the top-level seed.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// SHA-256 of the canonical (sorted-key, compact) resolved config.
std::string config_hash(const ExperimentConfig& c);

// Applies "a.b.c": value overrides to a config document.
nlohmann::json apply_overrides(nlohmann::json base, const nlohmann::json& overrides);

}  // namespace consult::harness
