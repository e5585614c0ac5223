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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "harness/audit.hpp"
#include "harness/config.hpp"
#include "harness/experiment.hpp"
#include "harness/metrics.hpp"
#include "harness/phantom.hpp"
#include "synthlab/synthlab.hpp"
#include "test_util.hpp"

// Last, replacing the glog-style CHECK that torch headers define.
#undef CHECK
#include "doctest.h"

using namespace consult;
using namespace consult::harness;
using json = nlohmann::json;

namespace {

std::vector<Label> labels_of(std::initializer_list<int> v) {
  std::vector<Label> out;
  for (int x : v) out.push_back(x ? Label::kAnomalous : Label::kHealthy);
  return out;
}

// Smallest configuration that exercises every stage.
json tiny_config() {
  return json::parse(R"({
    "shots": 2, "seed": 5, "heatmaps": 1,
    "data": {"phantom": {"size": 64, "n_train_healthy": 6, "n_test_healthy": 3, "n_test_anomalous": 3}},
    "synth": {"n_normal_aug": 2, "n_anomalous": 2},
    "extractor": {"base_width": 8},
    "train": {"epochs": 1, "iters_per_epoch": 1, "batch_size": 1},
    "bank": {"tau_samples": 2}
  })");
}

std::vector<double> scores_of(const MetricsReport& r) {
  std::vector<double> s;
  for (const auto& im : r.images) s.push_back(im.score);
  return s;
}

}  // namespace

TEST_CASE("auroc: worked example, extremes and ties") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  CHECK(auroc(s, labels_of({0, 0, 1, 1})) == doctest::Approx(0.75));
  const std::vector<double> sep{1, 2, 3, 10, 11};
  CHECK(auroc(sep, labels_of({0, 0, 0, 1, 1})) == 1.0);
  CHECK(auroc(sep, labels_of({1, 1, 0, 0, 0})) == 0.0);
  const std::vector<double> tied{1, 1, 1, 1};
  CHECK(auroc(tied, labels_of({0, 1, 0, 1})) == 0.5);
  CHECK_THROWS_AS(auroc(s, labels_of({0, 0, 0, 0})), InvalidArgument);
  CHECK_THROWS_AS(auroc(s, labels_of({1, 1, 1, 1})), InvalidArgument);
}

TEST_CASE("auroc: agrees with pair counting and is invariant to monotone transforms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 4 + static_cast<int>(rng() % 40);
    std::vector<double> s(n);
    std::vector<Label> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::round(u(rng) * 4) / 4;  // coarse values force ties
      l[i] = (rng() & 1) ? Label::kAnomalous : Label::kHealthy;
    }
    l[0] = Label::kHealthy;
    l[1] = Label::kAnomalous;
    double wins = 0, pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (l[i] == Label::kAnomalous && l[j] == Label::kHealthy) {
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
          pairs += 1;
        }
    const double a = auroc(s, l);
    CHECK(a == doctest::Approx(wins / pairs).epsilon(1e-12));
    std::vector<double> e(n);
    for (int i = 0; i < n; ++i) e[i] = std::exp(s[i]);
    CHECK(auroc(e, l) == a);
  }
}

TEST_CASE("auroc: null case approaches one half") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 20000;
  std::vector<double> s(n);
  std::vector<Label> l(n);
  for (int i = 0; i < n; ++i) {
    s[i] = u(rng);
    l[i] = (rng() & 1) ? Label::kAnomalous : Label::kHealthy;
  }
  CHECK(std::abs(auroc(s, l) - 0.5) < 0.02);
}

TEST_CASE("split_few_shot") {
  const auto all = split_few_shot(5, 5, 1);
  std::vector<int> sorted = all.few;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>({0, 1, 2, 3, 4}));
  CHECK(all.discarded.empty());

  const auto a = split_few_shot(100, 4, 77), b = split_few_shot(100, 4, 77);
  CHECK(a.few == b.few);
  CHECK(a.discarded.size() == 96);
  CHECK(std::is_sorted(a.discarded.begin(), a.discarded.end()));
  CHECK_THROWS_AS(split_few_shot(3, 4, 0), DataError);
}

TEST_CASE("split_few_shot: K=2 of 100 over 1000 seeds selects each image at 2/100") {
  const int pool = 100, k = 2, seeds = 1000;
  std::vector<int> hits(pool, 0);
  for (int s = 0; s < seeds; ++s) {
    const auto sp = split_few_shot(pool, k, static_cast<std::uint64_t>(s));
    REQUIRE(sp.few.size() == 2);
    REQUIRE(sp.few[0] != sp.few[1]);
    for (int i : sp.few) ++hits[static_cast<std::size_t>(i)];
  }
  const double p = double(k) / pool, mean = seeds * p, sigma = std::sqrt(seeds * p * (1 - p));
  for (int h : hits) {
    CHECK(h >= mean - 3 * sigma);
    CHECK(h <= mean + 3 * sigma);
  }
}

TEST_CASE("config: defaults, strict keys, overrides, hashing") {
  const auto def = experiment_config_from_json(json::object());
  CHECK(def.shots == 2);
  CHECK(def.bank.k_neighbors == 9);
  CHECK(def.bank.sampling_ratio == doctest::Approx(0.1));
  CHECK(def.train.epochs == 50);
  CHECK(def.train.learning_rate == doctest::Approx(1e-4));
  CHECK(def.synth.defect.n_control == 5);
  CHECK(def.synth.defect.edginess == doctest::Approx(0.05));

  CHECK_THROWS_AS(experiment_config_from_json({{"shotz", 2}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"bank", {{"k", 9}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"bank", {{"k_neighbors", 1}}}}), ConfigError);
  CHECK_THROWS_AS(experiment_config_from_json({{"shots", 0}}), ConfigError);

  const auto seeded = experiment_config_from_json({{"seed", 9}});
  CHECK(seeded.train.seed == 9);
  CHECK(config_hash(seeded) != config_hash(def));
  CHECK(config_hash(def) == config_hash(experiment_config_from_json(to_json(def))));
  CHECK(config_hash(def).size() == 64);

  const auto over = apply_overrides(to_json(def), {{"train.loss", "anchor"}, {"extractor.backbone_depth", 50}});
  const auto c = experiment_config_from_json(over);
  CHECK(c.train.loss == trainer::ContrastiveLoss::kAnchor);
  CHECK(c.extractor.backbone_depth == 50);
  CHECK_THROWS_AS(experiment_config_from_json(apply_overrides(to_json(def), {{"train.bogus", 1}})), ConfigError);

  const auto dir = test::scratch_dir("config");
  std::ofstream(dir / "c.json") << json{{"seed", 3}}.dump();
  CHECK(load_experiment_config(dir / "c.json").seed == 3);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("sweep presets: loss grid has 5 cells, model grid 8, all hashes distinct") {
  const auto base = to_json(experiment_config_from_json(json::object()));
  const auto loss = loss_ablation_grid().cells();
  const auto model = model_ablation_grid().cells();
  CHECK(loss.size() == 5);
  CHECK(model.size() == 8);
  for (const auto* cells : {&loss, &model}) {
    std::set<std::string> hashes;
    for (const auto& o : *cells) hashes.insert(config_hash(experiment_config_from_json(apply_overrides(base, o))));
    CHECK(hashes.size() == cells->size());
  }
  std::set<std::tuple<int, std::string, bool>> tags;
  for (const auto& o : model) {
    REQUIRE(o.contains("extractor.backbone_depth"));
    REQUIRE(o.contains("extractor.activation"));
    REQUIRE(o.contains("extractor.use_attention"));
    tags.insert({o["extractor.backbone_depth"].get<int>(), o["extractor.activation"].get<std::string>(),
                 o["extractor.use_attention"].get<bool>()});
  }
  CHECK(tags.size() == 8);

  const auto g = sweep_grid_from_json({{"rows", {{{"seed", 1}}, {{"seed", 2}}}}, {"axes", {{"shots", {2, 4, 8}}}}});
  const auto cells = g.cells();
  REQUIRE(cells.size() == 6);
  CHECK(cells[0] == json({{"seed", 1}, {"shots", 2}}));
  CHECK(cells[1] == json({{"seed", 1}, {"shots", 4}}));
  CHECK(cells[5] == json({{"seed", 2}, {"shots", 8}}));
  CHECK_THROWS_AS(sweep_grid_from_json({{"preset", "table9"}}), ConfigError);
  CHECK_THROWS_AS(sweep_grid_from_json({{"columns", 1}}), ConfigError);
}

TEST_CASE("metrics report JSON round-trip") {
  MetricsReport r;
  r.auroc = 0.8;
  r.auroc_raw = 0.7;
  r.tau = 1.5;
  r.images.push_back({"anomalous/a.png", Label::kAnomalous, 2.0, 2.5, true});
  r.config_hash = "abc";
  r.git_describe = "v1";
  r.config = {{"seed", 1}};
  r.test_healthy = 1;
  const auto back = metrics_report_from_json(to_json(r));
  CHECK(back.auroc == 0.8);
  CHECK(back.images.size() == 1);
  CHECK(back.images[0].label == Label::kAnomalous);
  CHECK(back.images[0].flagged);
  CHECK(back.config == r.config);
  CHECK(back.git_describe == "v1");
}

TEST_CASE("access audit blocks test files while the model is being built") {
  const auto dir = test::scratch_dir("audit");
  const auto img = harness::phantom_healthy(64, 1).image;
  synthlab::write_png(dir / "test.png", img);
  synthlab::write_png(dir / "train.png", img);
  AccessAudit audit;
  audit.forbid(dir / "sub" / ".." / "test.png");
  for (Stage s : {Stage::kSynth, Stage::kTrain, Stage::kBank, Stage::kSplit}) {
    audit.set_stage(s);
    CHECK_THROWS_AS(audit.read_image(dir / "test.png"), DataError);
    CHECK_NOTHROW(audit.read_image(dir / "train.png"));
  }
  audit.set_stage(Stage::kScore);
  CHECK(audit.read_image(dir / "test.png") == img);
  REQUIRE(audit.log().size() == 5);
  CHECK(audit.log().back().stage == Stage::kScore);
  CHECK(std::string(to_string(Stage::kBank)) == "bank");
}

TEST_CASE("phantom corpus layout and lesions") {
  PhantomConfig pc;
  pc.size = 64;
  pc.n_train_healthy = 3;
  pc.n_test_healthy = 2;
  pc.n_test_anomalous = 2;
  const auto dir = test::scratch_dir("phantom");
  const auto data = write_phantom_corpus(pc, 4, dir);
  CHECK(data.source == "directory");
  CHECK(list_images(data.train_healthy_dir).size() == 3);
  CHECK(list_images(data.test_healthy_dir).size() == 2);
  CHECK(list_images(data.test_anomalous_dir).size() == 2);
  for (const auto& p : list_images(data.test_anomalous_dir)) {
    const auto mask = synthlab::read_mask_png(data.test_mask_dir / p.filename());
    CHECK(mask.area() > 0);
  }
  const auto a = phantom_lesion(64, 1, 2, pc), b = phantom_lesion(64, 1, 2, pc);
  CHECK(a.image == b.image);
  const auto healthy = phantom_healthy(64, 1);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (!a.mask.at(y, x)) REQUIRE(a.image.at(y, x) == healthy.image.at(y, x));
  CHECK_THROWS_AS(list_images(dir / "nope"), DataError);
}

TEST_CASE("a failing stage writes failure.json and names the stage") {
  const auto dir = test::scratch_dir("failure");
  auto j = tiny_config();
  j["data"] = {{"source", "directory"},
               {"train_healthy_dir", (dir / "missing_train").string()},
               {"test_healthy_dir", (dir / "missing_h").string()},
               {"test_anomalous_dir", (dir / "missing_a").string()}};
  const auto cfg = experiment_config_from_json(j);
  try {
    run_experiment(cfg, dir / "run");
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
    CHECK(std::string(e.what()).rfind("stage setup: ", 0) == 0);
  }
  std::ifstream f(dir / "run" / "failure.json");
  const auto fj = json::parse(f);
  CHECK(fj.at("stage") == "setup");
  CHECK(fj.at("partial").at("completed_stages").empty());
}

TEST_CASE("end-to-end run: artefacts, completeness, hygiene and determinism") {
  const auto dir = test::scratch_dir("e2e");
  const auto cfg = experiment_config_from_json(tiny_config());
  const auto r1 = run_experiment(cfg, dir / "a");
  const auto r2 = run_experiment(cfg, dir / "b");

  for (const char* f : {"metrics.json", "manifest.json", "epoch_stats.csv", "weights.cwts", "bank.cslt"})
    CHECK(std::filesystem::exists(dir / "a" / f));
  CHECK(std::filesystem::exists(dir / "a" / "synth" / "manifest.json"));
  CHECK(std::distance(std::filesystem::directory_iterator(dir / "a" / "heatmaps"), {}) == 1);

  const auto& rep = r1.report;
  CHECK(rep.images.size() == 6);
  CHECK(rep.auroc >= 0.0);
  CHECK(rep.auroc <= 1.0);
  CHECK(rep.config == to_json(cfg));
  CHECK_FALSE(rep.git_describe.empty());
  CHECK(rep.config_hash == config_hash(cfg));
  CHECK(rep.test_healthy == 3);
  CHECK(rep.test_anomalous == 3);
  CHECK(r1.few_shot_files.size() == 2);
  CHECK(r1.stats.size() == 1);

  // No test image was opened before scoring.
  for (const auto& a : r1.accesses) {
    const bool test_file = a.path.find("/test/") != std::string::npos;
    if (test_file) CHECK(a.stage == Stage::kScore);
  }

  const auto s1 = scores_of(r1.report), s2 = scores_of(r2.report);
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(std::abs(s1[i] - s2[i]) <= 1e-6);

  std::ifstream mf(dir / "a" / "manifest.json");
  const auto manifest = json::parse(mf);
  for (const char* key : {"config", "config_hash", "git_describe", "seeds", "few_shot", "extractor_fingerprint"})
    CHECK(manifest.contains(key));

  // A single-cell sweep reproduces the direct run.
  const auto cells = sweep_ablation(to_json(cfg), sweep_grid_from_json({{"rows", {json::object()}}}), dir / "sweep");
  REQUIRE(cells.size() == 1);
  REQUIRE(cells[0].report.has_value());
  const auto s3 = scores_of(*cells[0].report);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(std::abs(s1[i] - s3[i]) <= 1e-6);
  CHECK(std::filesystem::exists(dir / "sweep" / "sweep.csv"));
  CHECK(std::filesystem::exists(dir / "sweep" / "sweep_table.csv"));
}

TEST_CASE("frozen-backbone path skips stage 1") {
  const auto dir = test::scratch_dir("frozen");
  auto j = tiny_config();
  j["skip_stage1"] = true;
  const auto r = run_experiment(experiment_config_from_json(j), dir);
  CHECK(r.stats.empty());
  CHECK(r.report.stage1_skipped);
  CHECK_FALSE(std::filesystem::exists(dir / "synth"));
}

TEST_CASE("sweep records failing cells and continues") {
  const auto dir = test::scratch_dir("sweep_fail");
  const auto g = sweep_grid_from_json({{"rows", {{{"bank.k_neighbors", 1}}, {{"train.epochs", 0}}}}});
  const auto cells = sweep_ablation(tiny_config(), g, dir);
  REQUIRE(cells.size() == 2);
  CHECK_FALSE(cells[0].report.has_value());
  CHECK(cells[0].error_code == 2);
  CHECK(cells[1].report.has_value());
}
