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

#include <fstream>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "nlohmann/json.hpp"
#include "synthlab/synthlab.hpp"

namespace consult::synthlab {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::kOriginal: return "original";
    case Provenance::kAugmented: return "aug";
    case Provenance::kDefect: return "defect";
  }
  return "unknown";
}

std::size_t PairedDataset::original_count() const { return original_indices().size(); }

std::vector<int> PairedDataset::original_indices() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < normals.size(); ++i)
    if (normals[i].provenance == Provenance::kOriginal) idx.push_back(static_cast<int>(i));
  return idx;
}

std::vector<int> PairedDataset::augmented_indices() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < normals.size(); ++i)
    if (normals[i].provenance == Provenance::kAugmented) idx.push_back(static_cast<int>(i));
  return idx;
}

PairedDataset build_pair_dataset(std::span<const GrayImage> few, int n_normal_aug, int n_anomalous,
                                 const DefectSpec& spec, std::uint64_t rng_seed, const AugmentParams& aug) {
  if (few.empty()) throw InvalidArgument("build_pair_dataset: few-shot set is empty");
  if (n_normal_aug < 0 || n_anomalous < 0) throw InvalidArgument("build_pair_dataset: negative counts");
  spec.validate();
  aug.validate();

  PairedDataset ds;
  for (std::size_t i = 0; i < few.size(); ++i)
    ds.normals.push_back({few[i], Provenance::kOriginal, rng_seed, static_cast<int>(i)});

  Rng pick = make_rng(derive_seed(rng_seed, "pair-dataset/pick"));
  const auto n_few = static_cast<std::int64_t>(few.size());
  for (int i = 0; i < n_normal_aug; ++i) {
    const int src = static_cast<int>(uniform_int(pick, 0, n_few - 1));
    const std::uint64_t seed = derive_seed(rng_seed, "pair-dataset/aug", static_cast<std::uint64_t>(i));
    ds.normals.push_back({augment_normal(few[static_cast<std::size_t>(src)], seed, aug), Provenance::kAugmented,
                          seed, src});
  }

  const auto n_g = static_cast<std::int64_t>(ds.normals.size());
  for (int i = 0; i < n_anomalous; ++i) {
    const int src = static_cast<int>(uniform_int(pick, 0, n_g - 1));
    DefectSpec s = spec;
    s.rng_seed = derive_seed(rng_seed, "pair-dataset/defect", static_cast<std::uint64_t>(i));
    auto res = generate_defect(ds.normals[static_cast<std::size_t>(src)].image, s);
    ds.anomalous.push_back({std::move(res.image), std::move(res.mask), s.rng_seed, src});
  }
  return ds;
}

void write_dataset(const PairedDataset& ds, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.normals.size(); ++i) {
    const auto& s = ds.normals[i];
    const std::string id = (s.provenance == Provenance::kOriginal ? "orig_" : "aug_") + std::to_string(i);
    write_png(out_dir / (id + ".png"), s.image);
    entries.push_back({{"id", id},
                       {"path", id + ".png"},
                       {"provenance", to_string(s.provenance)},
                       {"seed", s.seed},
                       {"source", s.source}});
  }
  for (std::size_t i = 0; i < ds.anomalous.size(); ++i) {
    const auto& s = ds.anomalous[i];
    const std::string id = "defect_" + std::to_string(i);
    write_png(out_dir / (id + ".png"), s.image);
    write_mask_png(out_dir / (id + "_mask.png"), s.mask);
    entries.push_back({{"id", id},
                       {"path", id + ".png"},
                       {"provenance", to_string(Provenance::kDefect)},
                       {"seed", s.seed},
                       {"source", s.source},
                       {"mask_path", id + "_mask.png"}});
  }
  std::ofstream f(out_dir / "manifest.json");
  if (!f) throw DataError("cannot write manifest in " + out_dir.string());
  f << nlohmann::json{{"entries", entries}}.dump(2) << "\n";
}

}  // namespace consult::synthlab
