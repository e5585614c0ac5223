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
#include <span>
#include <string>
#include <vector>

#include "nlohmann/json.hpp"

namespace consult::harness {

enum class Label : std::uint8_t { kHealthy = 0, kAnomalous = 1 };

// Rank-based AUROC (Mann-Whitney U, midranks for ties). Throws
// InvalidArgument unless both classes are present.
double auroc(std::span<const double> scores, std::span<const Label> labels);

struct FewShotSplit {
  std::vector<int> few;        // indices into the healthy pool, sampled order
  std::vector<int> discarded;  // the rest, ascending
};

// Uniform sample of K pool indices without replacement.
FewShotSplit split_few_shot(int pool_size, int shots, std::uint64_t seed);

struct ScoredImage {
  std::string name;
  Label label = Label::kHealthy;
  double score = 0.0;      // reweighted
  double raw_score = 0.0;  // plain max NN distance
  bool flagged = false;    // score > tau
};

struct MetricsReport {
  double auroc = 0.0;
  double auroc_raw = 0.0;
  double tau = 0.0;
  std::vector<ScoredImage> images;
  std::string config_hash;
  std::string git_describe;
  std::string extractor_fingerprint;
  nlohmann::json config;  // fully resolved
  bool stage1_skipped = false;
  int test_healthy = 0;
  int test_anomalous = 0;
  double runtime_seconds = 0.0;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

}  // namespace consult::harness
