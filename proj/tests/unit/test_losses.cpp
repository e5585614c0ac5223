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

#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "common/error.hpp"
#include "extractor/extractor.hpp"
#include "losses/losses.hpp"
#include "losses/losses_torch.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

// Last, replacing the glog-style CHECK that torch headers define.
#undef CHECK
#include "doctest.h"

using namespace consult;
using namespace consult::losses;
using namespace consult::test;

namespace {

PatchFeatureGrid grid_of(int h, int w, int d, std::vector<float> values) {
  PatchFeatureGrid g(h, w, d);
  g.values = std::move(values);
  return g;
}

ContrastiveDistances dist(double pull, double push) { return {pull, push, 1, 1}; }

}  // namespace

TEST_CASE("masked_distances worked examples") {
  const auto anchor = grid_of(1, 2, 2, {0, 0, 0, 0});
  const auto negative = grid_of(1, 2, 2, {1, 1, 1, 1});
  const std::vector<std::uint8_t> full{1, 1};

  const auto d = masked_distances(anchor, anchor, negative, full);
  CHECK(d.d_pull == 0.0);
  CHECK(d.d_push == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.pull_count == 2);
  CHECK(d.push_count == 2);

  const auto same = masked_distances(anchor, negative, anchor, full);
  CHECK(same.d_push == 0.0);
  CHECK(same.d_pull == doctest::Approx(1.0));

  const std::vector<std::uint8_t> empty{0, 0};
  CHECK_THROWS_AS(masked_distances(anchor, anchor, negative, empty), DataError);
}

TEST_CASE("masked_distances matches a brute-force loop") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_grid(rng, 4, 5, 7), p = random_grid(rng, 4, 5, 7), n = random_grid(rng, 4, 5, 7);
    std::vector<std::uint8_t> mask(20);
    for (auto& m : mask) m = rng() % 3 == 0;
    mask[rng() % 20] = 1;
    double pull = 0, push = 0;
    int cnt = 0;
    for (int c = 0; c < 20; ++c) {
      for (int k = 0; k < 7; ++k) {
        pull += std::pow(double(p.cell(c)[k]) - a.cell(c)[k], 2);
        if (mask[c]) push += std::pow(double(n.cell(c)[k]) - a.cell(c)[k], 2);
      }
      cnt += mask[c];
    }
    const auto d = masked_distances(a, p, n, mask);
    CHECK(rel_err(d.d_pull, pull / 20 / 7) < 1e-12);
    CHECK(rel_err(d.d_push, push / cnt / 7) < 1e-12);
  }
}

TEST_CASE("anchor_loss worked examples") {
  CHECK(anchor_loss(dist(0.2, 1.5), {1, 1, 1}) == 0.0);
  CHECK(anchor_loss(dist(1, 1), {1, 1, 1}) == 1.0);
  CHECK(anchor_loss(dist(0.3, 0.4), {2, 0.5, 0.1}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("tritanh_loss worked examples") {
  const TritanhParams p{2.0, 1.0, 0.7, 1.3};
  CHECK(tritanh_loss(dist(0, 0), p) == doctest::Approx(0.7 / 3.3).epsilon(1e-14));
  CHECK(tritanh_loss(dist(1, 1), {1, 1, 1, 1}) == doctest::Approx(1.0 / (2.0 * std::exp(1.0) + 1.0)).epsilon(1e-14));
  CHECK(tritanh_loss(dist(1, 1), {1, 1, 1, 1}) == doctest::Approx(0.15536).epsilon(1e-4));

  // Monotone approach to -1 as d_push grows, through and past the clamp.
  const TritanhParams q{};
  double prev = tritanh_loss(dist(0, 0), q);
  for (double push = 0.5; push <= 1000.0; push *= 1.5) {
    const double v = tritanh_loss(dist(0, push), q);
    CHECK(v <= prev);
    CHECK(v >= -1.0);
    prev = v;
  }
  CHECK(prev == doctest::Approx(-1.0).epsilon(1e-30));
}

TEST_CASE("tritanh exponent clamp is counted") {
  const auto before = tritanh_clamp_events();
  const double v = tritanh_loss(dist(0, 1000), {});
  CHECK(std::isfinite(v));
  CHECK(tritanh_clamp_events() == before + 1);
}

TEST_CASE("ssl_loss worked examples") {
  CHECK(ssl_loss(grid_of(1, 3, 2, {1, 2, 1, 2, 1, 2})) == 0.0);
  CHECK(ssl_loss(grid_of(1, 2, 1, {0, 2})) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK_THROWS_AS(ssl_loss(grid_of(1, 1, 3, {1, 2, 3})), InvalidArgument);
}

TEST_CASE("ssl_loss equals the brute-force pair loop on random grids") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 6), w = 2 + static_cast<int>(rng() % 6), d = 1 + static_cast<int>(rng() % 9);
    const auto g = random_grid(rng, h, w, d, 3.0);
    CHECK(rel_err(ssl_loss(g), ssl_brute(g)) < 1e-6);
  }
}

TEST_CASE("ssl_loss is nonnegative and zero only for identical cells") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto g = random_grid(rng, 3, 3, 4);
    CHECK(ssl_loss(g) > 1e-9);
    for (int c = 1; c < g.cells(); ++c)
      for (int k = 0; k < g.dim; ++k) g.cell(c)[k] = g.cell(0)[k];
    CHECK(ssl_loss(g) >= 0.0);
    CHECK(ssl_loss(g) < 1e-9);
  }
}

TEST_CASE("koleo_loss worked examples") {
  const SfaParams p{};
  const double e = std::exp(1.0);
  CHECK(koleo_loss(grid_of(1, 2, 2, {1, 0, 0, 1}), p) == doctest::Approx(-std::log(1 + 1e-8)).epsilon(1e-12));
  CHECK(koleo_loss(grid_of(1, 1, 1, {static_cast<float>(e)}), p) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(koleo_loss(grid_of(1, 3, 2, {1, 0, 0, static_cast<float>(e), 0, static_cast<float>(e * e)}), p) ==
        doctest::Approx(-1.0).epsilon(1e-6));
  // eps keeps the zero vector finite.
  CHECK(std::isfinite(koleo_loss(grid_of(1, 1, 2, {0, 0}), p)));
}

TEST_CASE("sfa_loss and total_loss compose their terms") {
  const auto two = grid_of(1, 2, 1, {0, 2});
  CHECK(sfa_loss(two, {0, 0, 1e-8}) == 0.0);
  const auto unit = grid_of(1, 2, 2, {1, 0, 1, 0});
  CHECK(std::abs(sfa_loss(unit, {0.01, 0.01, 1e-8})) < 1e-9);
  const auto unit_pair = grid_of(1, 2, 1, {-1, 1});
  CHECK(sfa_loss(unit_pair, {1, 1, 1e-8}) == doctest::Approx(4.0).epsilon(1e-7));

  const TritanhParams tp{};
  CHECK(total_loss(dist(0.3, 0.8), two, tp, {0, 0, 1e-8}) == tritanh_loss(dist(0.3, 0.8), tp));
  CHECK(total_loss(dist(0, 0), two, {2, 1, 0, 1}, {0, 0, 1e-8}) == 0.0);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = random_grid(rng, 3, 4, 5);
    const auto tp2 = random_params(rng);
    const SfaParams sp{0.3, 0.2, 1e-8};
    const auto d = dist(0.4, 1.1);
    const double sum = tritanh_direct(0.4, 1.1, tp2) + 0.3 * ssl_brute(g) + 0.2 * koleo_direct(g, 1e-8);
    CHECK(std::abs(total_loss(d, g, tp2, sp) - sum) < 1e-12 * std::max(1.0, std::abs(sum)) + 1e-12);
  }
}

TEST_CASE("scalar losses agree with direct evaluation on 1000 random inputs") {
  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<double> du(0.0, 4.0), au(0.1, 3.0), mu(-1.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    const double pull = du(rng), push = du(rng);
    const auto p = random_params(rng);
    CHECK(rel_err(tritanh_loss(dist(pull, push), p), tritanh_direct(pull, push, p)) < 1e-6);
    const AnchorParams a{au(rng), au(rng), mu(rng)};
    const double ref = a.alpha0 * pull - a.alpha1 * push + a.m;
    CHECK(anchor_loss(dist(pull, push), a) == doctest::Approx(ref > 0 ? ref : 0.0).epsilon(1e-12));
  }
}

TEST_CASE("tritanh is bounded in (-1, 1] under m0 <= m1 + 2") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> du(0.0, 5.0);
  for (int i = 0; i < 100000; ++i) {
    const auto p = random_params(rng);
    const double v = tritanh_loss(dist(du(rng), du(rng)), p);
    REQUIRE(v > -1.0);
    REQUIRE(v <= 1.0);
  }
  // The upper end is reached at d_push = 0 with m0 = m1 + 2.
  CHECK(tritanh_loss(dist(0.7, 0.0), {1.5, 1.0, 3.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("tritanh gradients: analytic matches central differences and has the right signs") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> du(1e-3, 3.0);
  const double h = 1e-5;
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_params(rng);
    const double pull = du(rng), push = du(rng);
    const auto g = tritanh_gradient(dist(pull, push), p);
    const double fd_pull = (tritanh_loss(dist(pull + h, push), p) - tritanh_loss(dist(pull - h, push), p)) / (2 * h);
    const double fd_push = (tritanh_loss(dist(pull, push + h), p) - tritanh_loss(dist(pull, push - h), p)) / (2 * h);
    REQUIRE(fd_pull > 0.0);
    REQUIRE(fd_push < 0.0);
    CHECK(rel_err(g.d_pull, fd_pull) < 1e-3);
    CHECK(rel_err(g.d_push, fd_push) < 1e-3);
  }
}

TEST_CASE("tritanh is strictly monotone along each axis") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_params(rng);
    double prev = tritanh_loss(dist(0.0, 1.0), p);
    for (double x = 0.05; x < 4.0; x += 0.05) {
      const double v = tritanh_loss(dist(x, 1.0), p);
      REQUIRE(v > prev);
      prev = v;
    }
    prev = tritanh_loss(dist(1.0, 0.0), p);
    for (double x = 0.05; x < 4.0; x += 0.05) {
      const double v = tritanh_loss(dist(1.0, x), p);
      REQUIRE(v < prev);
      prev = v;
    }
  }
}

TEST_CASE("anchor loss is zero on an open region with nonzero pull") {
  const AnchorParams p{};
  std::set<std::pair<double, double>> witnesses;
  for (int i = 1; i <= 12; ++i) {
    const double pull = 0.1 * i, push = pull + p.m + 0.5;
    CHECK(anchor_loss(dist(pull, push), p) == 0.0);
    CHECK(anchor_gradient(dist(pull, push), p).d_pull == 0.0);
    // Small perturbations stay at zero: the zero set has interior.
    CHECK(anchor_loss(dist(pull + 0.01, push - 0.01), p) == 0.0);
    witnesses.insert({pull, push});
  }
  CHECK(witnesses.size() >= 10);
}

TEST_CASE("tritanh pull gradient at defaults versus the constant anchor gradient") {
  const TritanhParams def{};
  const AnchorParams anchor{};
  // Measured values at the d_pull = d_push diagonal with the default
  // parameters. They sit below alpha0 over the whole [0.1, 1] range.
  CHECK(tritanh_gradient(dist(0.1, 0.1), def).d_pull == doctest::Approx(0.4879).epsilon(1e-3));
  double peak = 0.0;
  for (double delta = 0.1; delta <= 1.0 + 1e-12; delta += 0.01)
    peak = std::max(peak, tritanh_gradient(dist(delta, delta), def).d_pull);
  CHECK(peak < anchor.alpha0);
  // A larger pull scale does exceed it near the origin.
  CHECK(tritanh_gradient(dist(0.1, 0.1), {4.0, 1.0, 1.0, 1.0}).d_pull > anchor.alpha0);
}

TEST_CASE("tritanh pull gradient exceeds the anchor gradient at defaults" * doctest::should_fail()) {
  // Stated property, kept as written; fails with the default parameters.
  const TritanhParams def{};
  for (double delta = 0.1; delta <= 1.0 + 1e-12; delta += 0.1)
    CHECK(tritanh_gradient(dist(delta, delta), def).d_pull > AnchorParams{}.alpha0);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS((TritanhParams{0, 1, 1, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((TritanhParams{1, 1, 3.5, 1}.validate()), ConfigError);
  CHECK_NOTHROW((TritanhParams{1, 1, 3, 1}.validate()));
  CHECK_THROWS_AS((AnchorParams{1, 0, 1}.validate()), ConfigError);
  CHECK_THROWS_AS((SfaParams{-0.1, 0, 1e-8}.validate()), ConfigError);
  CHECK_THROWS_AS((SfaParams{0, 0, 0}.validate()), ConfigError);
  CHECK_THROWS_AS(tritanh_params_from_json({{"lambda", 1}}), ConfigError);
}

TEST_CASE("tensor forms agree with the scalar reference forms") {
  torch::manual_seed(1);
  const auto a = torch::randn({3, 6, 4, 5}), p = torch::randn({3, 6, 4, 5}), n = torch::randn({3, 6, 4, 5});
  auto mask = torch::rand({3, 4, 5}) > 0.6;
  mask.index_put_({torch::indexing::Slice(), 0, 0}, true);
  const TritanhParams tp{2.0, 1.0, 1.0, 1.0};
  const AnchorParams ap{};
  const SfaParams sp{};
  const auto d = autograd::masked_distances(a, p, n, mask);
  const auto tl = autograd::tritanh_loss(d.d_pull, d.d_push, tp);
  const auto al = autograd::anchor_loss(d.d_pull, d.d_push, ap);
  const auto sl = autograd::ssl_loss(a);
  const auto kl = autograd::koleo_loss(a, sp);
  for (int b = 0; b < 3; ++b) {
    const auto ga = extractor::to_grid(a[b], {6}, 1.0), gp = extractor::to_grid(p[b], {6}, 1.0),
               gn = extractor::to_grid(n[b], {6}, 1.0);
    const auto m = mask[b].flatten().to(torch::kUInt8).contiguous();
    const std::vector<std::uint8_t> mv(m.data_ptr<std::uint8_t>(), m.data_ptr<std::uint8_t>() + m.numel());
    const auto ref = masked_distances(ga, gp, gn, mv);
    CHECK(rel_err(d.d_pull[b].item<double>(), ref.d_pull) < 1e-5);
    CHECK(rel_err(d.d_push[b].item<double>(), ref.d_push) < 1e-5);
    CHECK(rel_err(tl[b].item<double>(), tritanh_loss(ref, tp)) < 1e-5);
    CHECK(std::abs(al[b].item<double>() - anchor_loss(ref, ap)) < 1e-5);
    CHECK(rel_err(sl[b].item<double>(), ssl_loss(ga)) < 1e-5);
    CHECK(rel_err(kl[b].item<double>(), koleo_loss(ga, sp)) < 1e-5);
  }
}

TEST_CASE("autograd of the total loss matches finite differences on a tiny two-stage network") {
  torch::manual_seed(4);
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  auto w1 = (torch::randn({4, 1, 3, 3}, f64) * 0.4).requires_grad_(true);
  auto w2 = (torch::randn({6, 4, 3, 3}, f64) * 0.3).requires_grad_(true);
  const auto xa = torch::rand({2, 1, 8, 8}, f64), xp = torch::rand({2, 1, 8, 8}, f64),
             xn = torch::rand({2, 1, 8, 8}, f64);
  auto mask = torch::zeros({2, 8, 8}, torch::kBool);
  mask.index_put_({torch::indexing::Slice(), torch::indexing::Slice(2, 5), torch::indexing::Slice(3, 6)}, true);
  const TritanhParams tp{2.0, 1.0, 1.0, 1.0};
  const SfaParams sp{0.5, 0.5, 1e-8};

  auto features = [&](const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    const auto s1 = torch::leaky_relu(F::conv2d(x, w1, F::Conv2dFuncOptions().padding(1)), 0.01);
    const auto s2 = torch::leaky_relu(F::conv2d(s1, w2, F::Conv2dFuncOptions().padding(1).stride(2)), 0.01);
    return extractor::aggregate_layers({s1, s2}, 3);
  };
  auto loss = [&]() {
    const auto fa = features(xa);
    const auto d = autograd::masked_distances(fa, features(xp), features(xn), mask);
    return (autograd::tritanh_loss(d.d_pull, d.d_push, tp) + sp.gamma1 * autograd::ssl_loss(fa) +
            sp.gamma2 * autograd::koleo_loss(fa, sp))
        .mean();
  };

  auto l = loss();
  l.backward();
  const auto g1 = w1.grad().clone(), g2 = w2.grad().clone();
  const double h = 1e-6;
  torch::NoGradGuard ng;
  for (auto [w, g] : {std::pair{w1, g1}, std::pair{w2, g2}}) {
    auto flat = w.view(-1);
    auto gflat = g.view(-1);
    for (int64_t i = 0; i < flat.numel(); i += 5) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = loss().item<double>();
      flat[i] = orig - h;
      const double down = loss().item<double>();
      flat[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double ad = gflat[i].item<double>();
      CHECK(std::abs(ad - fd) <= 1e-2 * std::max(std::abs(fd), 1e-6));
    }
  }
}
