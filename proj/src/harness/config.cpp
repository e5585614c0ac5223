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

#include "harness/config.hpp"

#include <fstream>

#include "common/error.hpp"
#include "common/json_util.hpp"

namespace consult::harness {

using nlohmann::json;

void PhantomConfig::validate() const {
  if (size < 32) throw ConfigError("data.phantom.size must be >= 32");
  if (n_train_healthy < 1) throw ConfigError("data.phantom.n_train_healthy must be >= 1");
  if (n_test_healthy < 1 || n_test_anomalous < 1)
    throw ConfigError("data.phantom: test split needs both healthy and anomalous images");
  if (!(lesion_contrast_min > 0.0 && lesion_contrast_max >= lesion_contrast_min))
    throw ConfigError("data.phantom: lesion contrast range invalid");
  if (!(lesion_sigma >= 0.0)) throw ConfigError("data.phantom.lesion_sigma must be >= 0");
  if (!(lesion_radius_min > 0.0 && lesion_radius_max >= lesion_radius_min && lesion_radius_max < 0.5))
    throw ConfigError("data.phantom: lesion radius range invalid");
}

void DataConfig::validate() const {
  if (source == "phantom") {
    phantom.validate();
  } else if (source == "directory") {
    if (train_healthy_dir.empty() || test_healthy_dir.empty() || test_anomalous_dir.empty())
      throw ConfigError("data: directory source needs train_healthy_dir, test_healthy_dir and test_anomalous_dir");
  } else {
    throw ConfigError("data.source must be 'phantom' or 'directory'");
  }
  if (image_size != 0 && image_size < 32) throw ConfigError("data.image_size must be 0 or >= 32");
}

void SynthConfig::validate() const {
  if (n_normal_aug < 1) throw ConfigError("synth.n_normal_aug must be >= 1");
  if (n_anomalous < 1) throw ConfigError("synth.n_anomalous must be >= 1");
  try {
    defect.validate();
    augment.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
}

void BankConfig::validate() const {
  bank::validate_bank_params(sampling_ratio, k_neighbors);
  if (!(tau_quantile > 0.0 && tau_quantile <= 1.0)) throw ConfigError("bank.tau_quantile must be in (0, 1]");
  if (tau_samples < 1) throw ConfigError("bank.tau_samples must be >= 1");
}

void ExperimentConfig::validate() const {
  if (shots < 1) throw ConfigError("shots must be >= 1");
  if (heatmaps < 0) throw ConfigError("heatmaps must be >= 0");
  data.validate();
  synth.validate();
  extractor.validate();
  train.validate();
  bank.validate();
}

json to_json(const PhantomConfig& c) {
  return {{"size", c.size},
          {"corpus_seed", c.corpus_seed},
          {"n_train_healthy", c.n_train_healthy},
          {"n_test_healthy", c.n_test_healthy},
          {"n_test_anomalous", c.n_test_anomalous},
          {"lesion_contrast_min", c.lesion_contrast_min},
          {"lesion_contrast_max", c.lesion_contrast_max},
          {"lesion_sigma", c.lesion_sigma},
          {"lesion_radius_min", c.lesion_radius_min},
          {"lesion_radius_max", c.lesion_radius_max}};
}

json to_json(const DataConfig& c) {
  return {{"source", c.source},
          {"train_healthy_dir", c.train_healthy_dir.string()},
          {"test_healthy_dir", c.test_healthy_dir.string()},
          {"test_anomalous_dir", c.test_anomalous_dir.string()},
          {"test_mask_dir", c.test_mask_dir.string()},
          {"image_size", c.image_size},
          {"phantom", to_json(c.phantom)}};
}

json to_json(const synthlab::DefectSpec& s) {
  return {{"n_control", s.n_control},
          {"edginess", s.edginess},
          {"mu", s.mu ? json(*s.mu) : json(nullptr)},
          {"sigma", s.sigma ? json(*s.sigma) : json(nullptr)},
          {"noise_base_shape", s.noise_base_shape},
          {"samples_per_segment", s.samples_per_segment},
          {"min_sep_fraction", s.min_sep_fraction},
          {"brain_threshold", s.brain.threshold ? json(*s.brain.threshold) : json(nullptr)},
          {"brain_morph_radius", s.brain.morph_radius}};
}

json to_json(const synthlab::AugmentParams& a) {
  return {{"probability", a.probability}, {"elastic_std", a.elastic_std}, {"elastic_smooth", a.elastic_smooth},
          {"grid_cells", a.grid_cells},   {"grid_jitter", a.grid_jitter}, {"gain", {a.gain_min, a.gain_max}},
          {"bias", {a.bias_min, a.bias_max}}};
}

json to_json(const SynthConfig& c) {
  return {{"n_normal_aug", c.n_normal_aug},
          {"n_anomalous", c.n_anomalous},
          {"regenerate_each_epoch", c.regenerate_each_epoch},
          {"defect", to_json(c.defect)},
          {"augment", to_json(c.augment)}};
}

json to_json(const BankConfig& c) {
  return {{"sampling_ratio", c.sampling_ratio},
          {"k_neighbors", c.k_neighbors},
          {"tau_quantile", c.tau_quantile},
          {"tau_samples", c.tau_samples}};
}

json to_json(const ExperimentConfig& c) {
  return {{"shots", c.shots},
          {"seed", c.seed},
          {"skip_stage1", c.skip_stage1},
          {"heatmaps", c.heatmaps},
          {"data", to_json(c.data)},
          {"synth", to_json(c.synth)},
          {"extractor", extractor::to_json(c.extractor)},
          {"train", trainer::to_json(c.train)},
          {"bank", to_json(c.bank)}};
}

namespace {

template <typename T>
std::optional<T> optional_or(const json& j, const char* key, const std::optional<T>& fallback, std::string_view section) {
  if (!j.contains(key)) return fallback;
  if (j.at(key).is_null()) return std::nullopt;
  return get_or<T>(j, key, T{}, section);
}

std::pair<double, double> range_or(const json& j, const char* key, std::pair<double, double> fallback,
                                   std::string_view section) {
  if (!j.contains(key)) return fallback;
  const auto v = get_or<std::vector<double>>(j, key, {}, section);
  if (v.size() != 2) throw ConfigError(std::string(section) + "." + key + ": expected [min, max]");
  return {v[0], v[1]};
}

}  // namespace

synthlab::DefectSpec defect_spec_from_json(const json& j) {
  constexpr const char* kSection = "synth.defect";
  check_keys(j,
             {"n_control", "edginess", "mu", "sigma", "noise_base_shape", "samples_per_segment", "min_sep_fraction",
              "brain_threshold", "brain_morph_radius"},
             kSection);
  synthlab::DefectSpec s;
  s.n_control = get_or(j, "n_control", s.n_control, kSection);
  s.edginess = get_or(j, "edginess", s.edginess, kSection);
  s.mu = optional_or(j, "mu", s.mu, kSection);
  s.sigma = optional_or(j, "sigma", s.sigma, kSection);
  s.noise_base_shape = get_or(j, "noise_base_shape", s.noise_base_shape, kSection);
  s.samples_per_segment = get_or(j, "samples_per_segment", s.samples_per_segment, kSection);
  s.min_sep_fraction = get_or(j, "min_sep_fraction", s.min_sep_fraction, kSection);
  s.brain.threshold = optional_or(j, "brain_threshold", s.brain.threshold, kSection);
  s.brain.morph_radius = get_or(j, "brain_morph_radius", s.brain.morph_radius, kSection);
  return s;
}

synthlab::AugmentParams augment_params_from_json(const json& j) {
  constexpr const char* kSection = "synth.augment";
  check_keys(j, {"probability", "elastic_std", "elastic_smooth", "grid_cells", "grid_jitter", "gain", "bias"},
             kSection);
  synthlab::AugmentParams a;
  a.probability = get_or(j, "probability", a.probability, kSection);
  a.elastic_std = get_or(j, "elastic_std", a.elastic_std, kSection);
  a.elastic_smooth = get_or(j, "elastic_smooth", a.elastic_smooth, kSection);
  a.grid_cells = get_or(j, "grid_cells", a.grid_cells, kSection);
  a.grid_jitter = get_or(j, "grid_jitter", a.grid_jitter, kSection);
  std::tie(a.gain_min, a.gain_max) = range_or(j, "gain", {a.gain_min, a.gain_max}, kSection);
  std::tie(a.bias_min, a.bias_max) = range_or(j, "bias", {a.bias_min, a.bias_max}, kSection);
  return a;
}

PhantomConfig phantom_config_from_json(const json& j) {
  constexpr const char* kSection = "data.phantom";
  check_keys(j,
             {"size", "corpus_seed", "n_train_healthy", "n_test_healthy", "n_test_anomalous", "lesion_contrast_min",
              "lesion_contrast_max", "lesion_sigma", "lesion_radius_min", "lesion_radius_max"},
             kSection);
  PhantomConfig c;
  c.size = get_or(j, "size", c.size, kSection);
  c.corpus_seed = get_or(j, "corpus_seed", c.corpus_seed, kSection);
  c.n_train_healthy = get_or(j, "n_train_healthy", c.n_train_healthy, kSection);
  c.n_test_healthy = get_or(j, "n_test_healthy", c.n_test_healthy, kSection);
  c.n_test_anomalous = get_or(j, "n_test_anomalous", c.n_test_anomalous, kSection);
  c.lesion_contrast_min = get_or(j, "lesion_contrast_min", c.lesion_contrast_min, kSection);
  c.lesion_contrast_max = get_or(j, "lesion_contrast_max", c.lesion_contrast_max, kSection);
  c.lesion_sigma = get_or(j, "lesion_sigma", c.lesion_sigma, kSection);
  c.lesion_radius_min = get_or(j, "lesion_radius_min", c.lesion_radius_min, kSection);
  c.lesion_radius_max = get_or(j, "lesion_radius_max", c.lesion_radius_max, kSection);
  return c;
}

DataConfig data_config_from_json(const json& j) {
  constexpr const char* kSection = "data";
  check_keys(j,
             {"source", "train_healthy_dir", "test_healthy_dir", "test_anomalous_dir", "test_mask_dir", "image_size",
              "phantom"},
             kSection);
  DataConfig c;
  c.source = get_or(j, "source", c.source, kSection);
  c.train_healthy_dir = get_or<std::string>(j, "train_healthy_dir", "", kSection);
  c.test_healthy_dir = get_or<std::string>(j, "test_healthy_dir", "", kSection);
  c.test_anomalous_dir = get_or<std::string>(j, "test_anomalous_dir", "", kSection);
  c.test_mask_dir = get_or<std::string>(j, "test_mask_dir", "", kSection);
  c.image_size = get_or(j, "image_size", c.image_size, kSection);
  if (j.contains("phantom")) c.phantom = phantom_config_from_json(j.at("phantom"));
  return c;
}

SynthConfig synth_config_from_json(const json& j) {
  constexpr const char* kSection = "synth";
  check_keys(j, {"n_normal_aug", "n_anomalous", "regenerate_each_epoch", "defect", "augment"}, kSection);
  SynthConfig c;
  c.n_normal_aug = get_or(j, "n_normal_aug", c.n_normal_aug, kSection);
  c.n_anomalous = get_or(j, "n_anomalous", c.n_anomalous, kSection);
  c.regenerate_each_epoch = get_or(j, "regenerate_each_epoch", c.regenerate_each_epoch, kSection);
  if (j.contains("defect")) c.defect = defect_spec_from_json(j.at("defect"));
  if (j.contains("augment")) c.augment = augment_params_from_json(j.at("augment"));
  return c;
}

BankConfig bank_config_from_json(const json& j) {
  constexpr const char* kSection = "bank";
  check_keys(j, {"sampling_ratio", "k_neighbors", "tau_quantile", "tau_samples"}, kSection);
  BankConfig c;
  c.sampling_ratio = get_or(j, "sampling_ratio", c.sampling_ratio, kSection);
  c.k_neighbors = get_or(j, "k_neighbors", c.k_neighbors, kSection);
  c.tau_quantile = get_or(j, "tau_quantile", c.tau_quantile, kSection);
  c.tau_samples = get_or(j, "tau_samples", c.tau_samples, kSection);
  return c;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  constexpr const char* kSection = "experiment";
  check_keys(j, {"shots", "seed", "skip_stage1", "heatmaps", "data", "synth", "extractor", "train", "bank"}, kSection);
  ExperimentConfig c;
  c.shots = get_or(j, "shots", c.shots, kSection);
  c.seed = get_or(j, "seed", c.seed, kSection);
  c.skip_stage1 = get_or(j, "skip_stage1", c.skip_stage1, kSection);
  c.heatmaps = get_or(j, "heatmaps", c.heatmaps, kSection);
  if (j.contains("data")) c.data = data_config_from_json(j.at("data"));
  if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
  if (j.contains("extractor")) c.extractor = extractor::extractor_config_from_json(j.at("extractor"));
  if (j.contains("train")) c.train = trainer::train_config_from_json(j.at("train"));
  if (j.contains("bank")) c.bank = bank_config_from_json(j.at("bank"));
  c.train.seed = c.seed;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::string config_hash(const ExperimentConfig& c) { return to_hex(sha256(to_json(c).dump())); }

json apply_overrides(json base, const json& overrides) {
  if (!overrides.is_object()) throw ConfigError("overrides must be a JSON object");
  for (const auto& [path, value] : overrides.items()) {
    json* node = &base;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) throw ConfigError("bad override path '" + path + "'");
      if (!node->is_object()) throw ConfigError("override path '" + path + "' crosses a non-object");
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return base;
}

}  // namespace consult::harness
