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
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "bank/bank.hpp"
#include "common/error.hpp"
#include "extractor/extractor.hpp"
#include "harness/phantom.hpp"
#include "synthlab/synthlab.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

// Last, replacing the glog-style CHECK that torch headers define.
#undef CHECK
#include "doctest.h"

using namespace consult;
using namespace consult::bank;
using namespace consult::test;

namespace {

MemoryBank bank_of(int dim, std::vector<float> vectors, int k = 9) {
  MemoryBank b;
  b.dim = dim;
  b.vectors = std::move(vectors);
  b.k_neighbors = k;
  for (std::size_t i = 0; i < b.vectors.size() / static_cast<std::size_t>(dim); ++i)
    b.sources.push_back({0, static_cast<int>(i)});
  b.grid_height = 1;
  b.grid_width = static_cast<int>(b.sources.size());
  return b;
}

PatchFeatureGrid grid_1d(std::vector<float> values) {
  PatchFeatureGrid g(1, static_cast<int>(values.size()), 1);
  g.values = std::move(values);
  return g;
}

extractor::ExtractorConfig small_config() {
  extractor::ExtractorConfig c;
  c.base_width = 8;
  return c;
}

}  // namespace

TEST_CASE("greedy coreset on {0, 1, 10} picks {0, 10}") {
  const std::vector<float> pts{0.0f, 1.0f, 10.0f};
  const PointSet ps{pts, 1};
  const auto sel = greedy_coreset(ps, 2, 0);
  CHECK(sel == std::vector<int>{0, 2});
  // Brute force over all 2-subsets agrees that {0, 10} is optimal.
  CHECK(covering_radius(ps, sel) == doctest::Approx(optimal_radius(ps, 2)));
  CHECK(covering_radius(ps, sel) == doctest::Approx(1.0));
}

TEST_CASE("greedy coreset is within twice the exhaustive optimum on small instances") {
  std::mt19937_64 rng(77);
  int instances = 0;
  for (std::size_t n = 2; n <= 20; n += 3)
    for (std::size_t k = 1; k <= std::min<std::size_t>(4, n); ++k)
      for (int rep = 0; rep < 4; ++rep) {
        const int dim = 1 + static_cast<int>(rng() % 4);
        const auto data = random_points(rng, n, dim);
        const PointSet ps{data, dim};
        const auto sel = greedy_coreset(ps, k, rng() % n);
        CHECK(covering_radius(ps, sel) <= 2.0 * optimal_radius(ps, k) + 1e-9);
        ++instances;
      }
  CHECK(instances > 100);
}

TEST_CASE("greedy coreset on a 500x16 set against a 20-point exhaustive subproblem") {
  std::mt19937_64 rng(5);
  const auto data = random_points(rng, 500, 16);
  const PointSet ps{data, 16};
  const auto sel = greedy_coreset(ps, 50, 0);
  std::vector<int> sorted = sel;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  // Selected points are never farther from the rest than the unselected.
  CHECK(covering_radius(ps, sel) < covering_radius(ps, std::vector<int>(sel.begin(), sel.begin() + 10)));

  const std::vector<float> sub(data.begin(), data.begin() + 20 * 16);
  const PointSet small{sub, 16};
  CHECK(covering_radius(small, greedy_coreset(small, 4, 3)) <= 2.0 * optimal_radius(small, 4) + 1e-9);
}

TEST_CASE("greedy coreset never repeats a point, even with duplicates") {
  const std::vector<float> pts{1, 1, 1, 1, 2, 2};
  const auto sel = greedy_coreset(PointSet{pts, 1}, 6, 0);
  std::vector<int> sorted = sel;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("build_bank_from_grids sizes, ratio 1 and errors") {
  std::mt19937_64 rng(1);
  std::vector<PatchFeatureGrid> grids(2, PatchFeatureGrid(3, 4, 5));
  for (auto& g : grids)
    for (auto& v : g.values) v = std::normal_distribution<float>()(rng);
  const Digest fp{};

  const auto all = build_bank_from_grids(grids, 1.0, 9, 42, fp);
  REQUIRE(all.size() == 24);
  std::vector<std::pair<int, int>> src;
  for (const auto& s : all.sources) src.emplace_back(s.image, s.cell);
  std::sort(src.begin(), src.end());
  CHECK(std::adjacent_find(src.begin(), src.end()) == src.end());

  CHECK(build_bank_from_grids(grids, 0.1, 9, 42, fp).size() == 3);  // ceil(2.4)
  CHECK(build_bank_from_grids(grids, 0.5, 9, 42, fp).size() == 12);
  CHECK_THROWS_AS(build_bank_from_grids(grids, 0.01, 9, 42, fp), ConfigError);
  CHECK_THROWS_AS(build_bank_from_grids(grids, 0.0, 9, 42, fp), ConfigError);
  CHECK_THROWS_AS(build_bank_from_grids(grids, 1.5, 9, 42, fp), ConfigError);
  CHECK_THROWS_AS(build_bank_from_grids(grids, 0.5, 1, 42, fp), ConfigError);
  CHECK_NOTHROW(validate_bank_params(0.1, 2));
  CHECK_THROWS_AS(validate_bank_params(0.1, 1), ConfigError);

  // Seeded start: same seed, same bank.
  const auto a = build_bank_from_grids(grids, 0.25, 9, 7, fp), b = build_bank_from_grids(grids, 0.25, 9, 7, fp);
  CHECK(a.vectors == b.vectors);
}

TEST_CASE("raw cell scores") {
  const auto bank = bank_of(1, {0.0f, 1.0f});
  const auto m = score_grid(grid_1d({0.4f, 1.0f}), bank);
  CHECK(m.scores[0] == doctest::Approx(0.16).epsilon(1e-6));
  CHECK(m.scores[1] == 0.0f);
  CHECK(m.raw_score == doctest::Approx(0.16).epsilon(1e-6));
  CHECK(m.argmax_cell == 0);
}

TEST_CASE("k = 1 would zero every image score") {
  // The degenerate factor itself: e^{s*} / e^{s*}.
  const auto b1 = bank_of(1, {0.0f, 1.0f}, 1);
  const std::vector<float> q{0.4f};
  CHECK(reweight_factor(b1, q, 0) == 0.0);
  CHECK_THROWS_AS(validate_bank_params(0.5, 1), ConfigError);
}

TEST_CASE("reweighting stays in [1 - 1/k, 1] and never raises the score") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const int dim = 1 + static_cast<int>(rng() % 6);
    const std::size_t n = 2 + rng() % 30;
    auto bank = bank_of(dim, random_points(rng, n, dim), 2 + static_cast<int>(rng() % 10));
    PatchFeatureGrid g(2, 3, dim);
    g.values = random_points(rng, 6, dim);
    for (auto& v : g.values) v *= 2.0f;
    const auto m = score_grid(g, bank);
    // Below 1 exactly; rounds to 1.0 once the other neighbours are ~37 nats away.
    const double k = std::min<double>(bank.k_neighbors, static_cast<double>(bank.size()));
    CHECK(m.reweight >= 1.0 - 1.0 / k - 1e-12);
    CHECK(m.reweight <= 1.0);
    CHECK(m.image_score <= m.raw_score);
    CHECK(m.raw_score == doctest::Approx(*std::max_element(m.scores.begin(), m.scores.end())).epsilon(1e-6));
    for (float s : m.scores) CHECK(s >= 0.0f);
  }
}

TEST_CASE("adding a vector never increases a raw cell score") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = 3;
    auto vecs = random_points(rng, 5, dim);
    PatchFeatureGrid g(3, 3, dim);
    g.values = random_points(rng, 9, dim);
    const auto before = score_grid(g, bank_of(dim, vecs));
    const auto extra = random_points(rng, 1, dim);
    vecs.insert(vecs.end(), extra.begin(), extra.end());
    const auto after = score_grid(g, bank_of(dim, vecs));
    for (std::size_t c = 0; c < before.scores.size(); ++c) CHECK(after.scores[c] <= before.scores[c]);
  }
}

TEST_CASE("decide") {
  AnomalyMap m;
  m.image_score = 0.0;
  CHECK_FALSE(decide(m, 0.0).is_anomaly);
  m.image_score = 5.0;
  CHECK(decide(m, 1.0).is_anomaly);
  CHECK(decide(m, 1.0).tau == 1.0);
  m.image_score = 1e300;
  CHECK_FALSE(decide(m, std::numeric_limits<double>::infinity()).is_anomaly);
}

TEST_CASE("calibrate_tau") {
  const std::vector<double> four{3, 1, 4, 2};
  CHECK(calibrate_tau(four, 1.0) == 4.0);
  const std::vector<double> flat(7, 2.5);
  for (double q : {0.01, 0.5, 0.99, 1.0}) CHECK(calibrate_tau(flat, q) == 2.5);
  std::vector<double> hundred(100);
  std::iota(hundred.begin(), hundred.end(), 0.0);
  CHECK(calibrate_tau(hundred, 0.95) == doctest::Approx(94.05).epsilon(1e-12));
  CHECK_THROWS_AS(calibrate_tau(std::vector<double>{}, 0.5), InvalidArgument);
  CHECK_THROWS_AS(calibrate_tau(four, 0.0), InvalidArgument);
  CHECK_THROWS_AS(calibrate_tau(four, 1.01), InvalidArgument);
}

TEST_CASE("bank file round-trip and corruption") {
  std::mt19937_64 rng(21);
  auto b = bank_of(4, random_points(rng, 7, 4), 5);
  b.sampling_ratio = 0.25;
  b.extractor_fingerprint[0] = 0xAB;
  b.extractor_fingerprint[31] = 0x01;
  b.grid_height = 7;
  b.grid_width = 1;
  b.sources[3] = {2, 11};
  const auto dir = test::scratch_dir("bank_io");
  b.save(dir / "b.cslt");
  const auto r = MemoryBank::load(dir / "b.cslt");
  CHECK(r.dim == 4);
  CHECK(r.vectors == b.vectors);
  CHECK(r.k_neighbors == 5);
  CHECK(r.sampling_ratio == 0.25);
  CHECK(r.extractor_fingerprint == b.extractor_fingerprint);
  CHECK(r.grid_height == 7);
  CHECK(r.sources[3].image == 2);
  CHECK(r.sources[3].cell == 11);

  {
    std::ifstream in(dir / "b.cslt", std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "CSLT");
  }
  std::ofstream(dir / "bad.cslt", std::ios::binary) << "NOPE";
  CHECK_THROWS_AS(MemoryBank::load(dir / "bad.cslt"), DataError);
  std::filesystem::resize_file(dir / "b.cslt", 60);
  CHECK_THROWS_AS(MemoryBank::load(dir / "b.cslt"), DataError);
}

TEST_CASE("bank vectors trace back to their source cells") {
  extractor::Extractor model(small_config(), 3);
  std::vector<synthlab::GrayImage> few{harness::phantom_healthy(64, 1).image, harness::phantom_healthy(64, 2).image};
  model.calibrate_batchnorm(few);
  const auto bank = build_bank(few, model, 0.2, 9, 11);
  REQUIRE(bank.size() > 0);
  std::vector<PatchFeatureGrid> grids{model.patch_grid(few[0]), model.patch_grid(few[1])};
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& s = bank.sources[i];
    const auto ref = grids[static_cast<std::size_t>(s.image)].cell(s.cell);
    const auto v = bank.vector(i);
    double worst = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) worst = std::max(worst, std::abs(double(v[k]) - ref[k]));
    CHECK(worst <= 1e-5);
  }
  CHECK(bank.grid_height == grids[0].height);
  CHECK(bank.extractor_fingerprint == model.fingerprint());
}

TEST_CASE("scoring refuses a bank built by another extractor") {
  extractor::Extractor a(small_config(), 1), b(small_config(), 2);
  const std::vector<synthlab::GrayImage> few{harness::phantom_healthy(64, 5).image};
  const auto bank = build_bank(few, a, 0.5, 9, 0);
  CHECK_NOTHROW(score_image(few[0], bank, a));
  CHECK_THROWS_AS(score_image(few[0], bank, b), ConfigError);
}

TEST_CASE("a bank source image scores below its defect-inpainted variants") {
  extractor::Extractor model(small_config(), 8);
  const auto img = harness::phantom_healthy(64, 3).image;
  const std::vector<synthlab::GrayImage> few{img};
  model.calibrate_batchnorm(few);
  const auto bank = build_bank(few, model, 0.1, 9, 4);
  const auto self = score_image(img, bank, model);
  CHECK(self.upsampled.height == 64);
  CHECK(self.upsampled.values.size() == 64u * 64u);
  double lowest = std::numeric_limits<double>::infinity();
  for (std::uint64_t s = 0; s < 10; ++s) {
    synthlab::DefectSpec spec;
    spec.rng_seed = s;
    const auto d = synthlab::generate_defect(img, spec);
    lowest = std::min(lowest, score_image(d.image, bank, model).image_score);
  }
  CHECK(self.image_score < lowest);
}

TEST_CASE("heatmap overlay is written at image resolution") {
  extractor::Extractor model(small_config(), 8);
  const auto img = harness::phantom_healthy(64, 3).image;
  const std::vector<synthlab::GrayImage> few{img};
  const auto bank = build_bank(few, model, 0.1, 9, 4);
  const auto map = score_image(img, bank, model);
  const auto dir = test::scratch_dir("overlay");
  write_heatmap_overlay(dir / "o.png", img, map);
  const auto back = synthlab::read_png(dir / "o.png");
  CHECK(back.height() == 64);
  CHECK(back.width() == 64);
}
