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

#include "harness/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace consult::harness {

double auroc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw InvalidArgument("auroc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;  // of anomalous samples
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == Label::kAnomalous) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InvalidArgument("auroc: undefined with a single class");
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

FewShotSplit split_few_shot(int pool_size, int shots, std::uint64_t seed) {
  if (shots < 1) throw ConfigError("shots must be >= 1");
  if (pool_size < shots)
    throw DataError("healthy pool has " + std::to_string(pool_size) + " images, fewer than K = " + std::to_string(shots));
  std::vector<int> idx(static_cast<std::size_t>(pool_size));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(derive_seed(seed, "harness/split"));
  // Partial Fisher-Yates: the first K positions are the sample.
  for (int i = 0; i < shots; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, i, pool_size - 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  FewShotSplit s;
  s.few.assign(idx.begin(), idx.begin() + shots);
  s.discarded.assign(idx.begin() + shots, idx.end());
  std::sort(s.discarded.begin(), s.discarded.end());
  return s;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json imgs = nlohmann::json::array();
  for (const auto& im : r.images)
    imgs.push_back({{"name", im.name},
                    {"label", im.label == Label::kAnomalous ? "anomalous" : "healthy"},
                    {"score", im.score},
                    {"raw_score", im.raw_score},
                    {"flagged", im.flagged}});
  return {{"auroc", r.auroc},
          {"auroc_raw", r.auroc_raw},
          {"tau", r.tau},
          {"images", imgs},
          {"config_hash", r.config_hash},
          {"git_describe", r.git_describe},
          {"extractor_fingerprint", r.extractor_fingerprint},
          {"config", r.config},
          {"stage1_skipped", r.stage1_skipped},
          {"test_healthy", r.test_healthy},
          {"test_anomalous", r.test_anomalous},
          {"runtime_seconds", r.runtime_seconds}};
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.auroc = j.at("auroc").get<double>();
    r.auroc_raw = j.at("auroc_raw").get<double>();
    r.tau = j.at("tau").get<double>();
    for (const auto& im : j.at("images"))
      r.images.push_back({im.at("name").get<std::string>(),
                          im.at("label").get<std::string>() == "anomalous" ? Label::kAnomalous : Label::kHealthy,
                          im.at("score").get<double>(), im.at("raw_score").get<double>(), im.at("flagged").get<bool>()});
    r.config_hash = j.at("config_hash").get<std::string>();
    r.git_describe = j.at("git_describe").get<std::string>();
    r.extractor_fingerprint = j.at("extractor_fingerprint").get<std::string>();
    r.config = j.at("config");
    r.stage1_skipped = j.at("stage1_skipped").get<bool>();
    r.test_healthy = j.at("test_healthy").get<int>();
    r.test_anomalous = j.at("test_anomalous").get<int>();
    r.runtime_seconds = j.at("runtime_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

}  // namespace consult::harness
