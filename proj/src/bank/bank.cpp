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

#include "bank/bank.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "synthlab/cv_bridge.hpp"

static_assert(std::endian::native == std::endian::little, "bank I/O assumes a little-endian host");

namespace consult::bank {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr double kBlurSigma = 4.0;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated bank file: " + path.string());
  return v;
}

}  // namespace

void MemoryBank::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write bank: " + path.string());
  os.write(kMagic, 4);
  put(os, kVersion);
  put(os, static_cast<std::uint32_t>(dim));
  put(os, static_cast<std::uint32_t>(size()));
  put(os, static_cast<std::uint32_t>(k_neighbors));
  put(os, sampling_ratio);
  os.write(reinterpret_cast<const char*>(extractor_fingerprint.data()), extractor_fingerprint.size());
  os.write(reinterpret_cast<const char*>(vectors.data()), static_cast<std::streamsize>(vectors.size() * sizeof(float)));
  nlohmann::json trailer;
  trailer["grid"] = {grid_height, grid_width};
  auto& src = trailer["sources"] = nlohmann::json::array();
  for (const auto& s : sources) src.push_back({s.image, s.cell});
  os << trailer.dump();
  if (!os) throw DataError("failed writing bank: " + path.string());
}

MemoryBank MemoryBank::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open bank: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a bank file: " + path.string());
  const auto version = take<std::uint32_t>(is, path);
  if (version != kVersion) throw DataError("unsupported bank version " + std::to_string(version));
  MemoryBank b;
  b.dim = static_cast<int>(take<std::uint32_t>(is, path));
  const auto count = take<std::uint32_t>(is, path);
  b.k_neighbors = static_cast<int>(take<std::uint32_t>(is, path));
  b.sampling_ratio = take<double>(is, path);
  if (!is.read(reinterpret_cast<char*>(b.extractor_fingerprint.data()), b.extractor_fingerprint.size()))
    throw DataError("truncated bank file: " + path.string());
  b.vectors.resize(static_cast<std::size_t>(count) * b.dim);
  if (!is.read(reinterpret_cast<char*>(b.vectors.data()), static_cast<std::streamsize>(b.vectors.size() * sizeof(float))))
    throw DataError("truncated bank file: " + path.string());
  const std::string rest{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
  nlohmann::json trailer;
  try {
    trailer = nlohmann::json::parse(rest);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad bank trailer: ") + e.what());
  }
  b.grid_height = trailer.at("grid").at(0).get<int>();
  b.grid_width = trailer.at("grid").at(1).get<int>();
  for (const auto& s : trailer.at("sources")) b.sources.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
  if (b.sources.size() != count) throw DataError("bank trailer lists " + std::to_string(b.sources.size()) +
                                                 " sources for " + std::to_string(count) + " vectors");
  return b;
}

std::vector<int> greedy_coreset(const PointSet& points, std::size_t count, std::size_t start_index) {
  const std::size_t n = points.size();
  if (count == 0 || count > n) throw InvalidArgument("coreset size must be in [1, |M|]");
  if (start_index >= n) throw InvalidArgument("coreset start index out of range");
  std::vector<int> selected{static_cast<int>(start_index)};
  selected.reserve(count);
  std::vector<char> taken(n, 0);
  taken[start_index] = 1;
  std::vector<double> min_d(n);
  for (std::size_t i = 0; i < n; ++i) min_d[i] = squared_distance(points.point(i), points.point(start_index));
  while (selected.size() < count) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i] && (best == n || min_d[i] > min_d[best])) best = i;
    taken[best] = 1;
    selected.push_back(static_cast<int>(best));
    const auto c = points.point(best);
    for (std::size_t i = 0; i < n; ++i) min_d[i] = std::min(min_d[i], squared_distance(points.point(i), c));
  }
  return selected;
}

double covering_radius(const PointSet& points, std::span<const int> selected) {
  if (selected.empty()) throw InvalidArgument("empty selection");
  double worst = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int s : selected) best = std::min(best, squared_distance(points.point(i), points.point(s)));
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

void validate_bank_params(double sampling_ratio, int k_neighbors) {
  if (!(sampling_ratio > 0.0 && sampling_ratio <= 1.0)) throw ConfigError("bank.sampling_ratio must be in (0, 1]");
  if (k_neighbors < 2) throw ConfigError("bank.k_neighbors must be >= 2");
}

MemoryBank build_bank_from_grids(std::span<const PatchFeatureGrid> grids, double sampling_ratio, int k_neighbors,
                                 std::uint64_t seed, const Digest& fingerprint) {
  validate_bank_params(sampling_ratio, k_neighbors);
  if (grids.empty()) throw ConfigError("memory bank needs at least one healthy image");
  const auto& g0 = grids.front();
  std::vector<float> pool;
  std::vector<SourceIndex> origin;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    if (!grids[i].same_shape(g0)) throw DataError("few-shot feature grids differ in shape");
    if (!grids[i].all_finite()) throw NumericalError("non-finite feature in few-shot image " + std::to_string(i));
    pool.insert(pool.end(), grids[i].values.begin(), grids[i].values.end());
    for (int c = 0; c < grids[i].cells(); ++c) origin.push_back({static_cast<int>(i), c});
  }
  const double target = sampling_ratio * static_cast<double>(origin.size());
  if (target < 1.0)
    throw ConfigError("sampling_ratio * |M| < 1: coreset would be empty (|M| = " + std::to_string(origin.size()) + ")");
  const auto count = static_cast<std::size_t>(std::ceil(target - 1e-9));

  Rng rng = make_rng(derive_seed(seed, "bank/start", 0));
  const auto start = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(origin.size()) - 1));
  const PointSet points{pool, g0.dim};
  const auto selected = greedy_coreset(points, count, start);

  MemoryBank bank;
  bank.dim = g0.dim;
  bank.k_neighbors = k_neighbors;
  bank.sampling_ratio = sampling_ratio;
  bank.extractor_fingerprint = fingerprint;
  bank.grid_height = g0.height;
  bank.grid_width = g0.width;
  bank.vectors.reserve(selected.size() * static_cast<std::size_t>(g0.dim));
  for (int s : selected) {
    const auto p = points.point(static_cast<std::size_t>(s));
    bank.vectors.insert(bank.vectors.end(), p.begin(), p.end());
    bank.sources.push_back(origin[static_cast<std::size_t>(s)]);
  }
  return bank;
}

MemoryBank build_bank(std::span<const synthlab::GrayImage> few, extractor::Extractor& model, double sampling_ratio,
                      int k_neighbors, std::uint64_t seed) {
  const auto grids = model.patch_grids(few);
  return build_bank_from_grids(grids, sampling_ratio, k_neighbors, seed, model.fingerprint());
}

NearestNeighbour nearest(const MemoryBank& bank, std::span<const float> query) {
  NearestNeighbour nn;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const double d = squared_distance(query, bank.vector(i));
    if (d < nn.distance) {
      nn.distance = d;
      nn.index = static_cast<int>(i);
    }
  }
  return nn;
}

double reweight_factor(const MemoryBank& bank, std::span<const float> query, int nearest_index) {
  const auto m_star = bank.vector(static_cast<std::size_t>(nearest_index));
  // N_k(m*): the k bank vectors closest to m*, m* itself included.
  std::vector<std::pair<double, int>> by_dist;
  by_dist.reserve(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i)
    by_dist.emplace_back(squared_distance(m_star, bank.vector(i)), static_cast<int>(i));
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(bank.k_neighbors), by_dist.size());
  std::partial_sort(by_dist.begin(), by_dist.begin() + static_cast<std::ptrdiff_t>(k), by_dist.end());
  // Guarantee m* is a member even when duplicates tie at distance 0.
  bool has_star = false;
  for (std::size_t j = 0; j < k; ++j) has_star |= by_dist[j].second == nearest_index;
  if (!has_star) by_dist[k - 1] = {0.0, nearest_index};

  std::vector<double> d(k);
  for (std::size_t j = 0; j < k; ++j)
    d[j] = squared_distance(query, bank.vector(static_cast<std::size_t>(by_dist[j].second)));
  const double s_star = squared_distance(query, m_star);
  const double shift = *std::max_element(d.begin(), d.end());
  double denom = 0.0;
  for (double v : d) denom += std::exp(v - shift);
  return 1.0 - std::exp(s_star - shift) / denom;
}

AnomalyMap score_grid(const PatchFeatureGrid& grid, const MemoryBank& bank, int out_height, int out_width) {
  if (bank.size() == 0) throw DataError("memory bank is empty");
  if (grid.dim != bank.dim)
    throw DataError("feature dimension " + std::to_string(grid.dim) + " does not match bank " + std::to_string(bank.dim));
  AnomalyMap m;
  m.height = grid.height;
  m.width = grid.width;
  m.scores.resize(static_cast<std::size_t>(grid.cells()));
  std::vector<int> nn_index(m.scores.size());
  for (int c = 0; c < grid.cells(); ++c) {
    const auto nn = nearest(bank, grid.cell(c));
    m.scores[static_cast<std::size_t>(c)] = static_cast<float>(nn.distance);
    nn_index[static_cast<std::size_t>(c)] = nn.index;
  }
  const auto it = std::max_element(m.scores.begin(), m.scores.end());
  m.argmax_cell = static_cast<int>(std::distance(m.scores.begin(), it));
  m.raw_score = squared_distance(grid.cell(m.argmax_cell),
                                 bank.vector(static_cast<std::size_t>(nn_index[static_cast<std::size_t>(m.argmax_cell)])));
  m.reweight = reweight_factor(bank, grid.cell(m.argmax_cell), nn_index[static_cast<std::size_t>(m.argmax_cell)]);
  m.image_score = m.reweight * m.raw_score;
  if (!std::isfinite(m.image_score)) throw NumericalError("non-finite anomaly score");

  if (out_height > 0 && out_width > 0) {
    cv::Mat small(m.height, m.width, CV_32F, m.scores.data());
    cv::Mat up;
    cv::resize(small, up, cv::Size(out_width, out_height), 0, 0, cv::INTER_LINEAR);
    cv::GaussianBlur(up, up, cv::Size(0, 0), kBlurSigma, kBlurSigma, cv::BORDER_REFLECT);
    m.upsampled.height = out_height;
    m.upsampled.width = out_width;
    m.upsampled.values.assign(up.ptr<float>(), up.ptr<float>() + static_cast<std::size_t>(out_height) * out_width);
  }
  return m;
}

AnomalyMap score_image(const synthlab::GrayImage& img, const MemoryBank& bank, extractor::Extractor& model) {
  if (model.fingerprint() != bank.extractor_fingerprint)
    throw ConfigError("memory bank was built with a different extractor; rebuild the bank");
  return score_grid(model.patch_grid(img), bank, img.height(), img.width());
}

Decision decide(const AnomalyMap& map, double tau) { return {tau, map.image_score > tau}; }

double calibrate_tau(std::span<const double> healthy_scores, double q) {
  if (healthy_scores.empty()) throw InvalidArgument("calibrate_tau: no scores");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("calibrate_tau: q must be in (0, 1]");
  std::vector<double> s(healthy_scores.begin(), healthy_scores.end());
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

void write_heatmap_overlay(const std::filesystem::path& path, const synthlab::GrayImage& img, const AnomalyMap& map) {
  if (map.upsampled.height != img.height() || map.upsampled.width != img.width())
    throw InvalidArgument("heatmap resolution does not match image");
  cv::Mat scores(map.upsampled.height, map.upsampled.width, CV_32F,
                 const_cast<float*>(map.upsampled.values.data()));
  cv::Mat norm8;
  cv::normalize(scores, norm8, 0, 255, cv::NORM_MINMAX, CV_8U);
  cv::Mat colour, grey3, out;
  cv::applyColorMap(norm8, colour, cv::COLORMAP_JET);
  cv::cvtColor(synthlab::as_mat(img), grey3, cv::COLOR_GRAY2BGR);
  cv::addWeighted(grey3, 0.5, colour, 0.5, 0.0, out);
  if (!cv::imwrite(path.string(), out)) throw DataError("cannot write heatmap: " + path.string());
}

}  // namespace consult::bank
