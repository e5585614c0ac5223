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

#include "extractor/extractor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "common/error.hpp"

namespace consult::extractor {

namespace F = torch::nn::functional;

namespace {

constexpr char kMagic[8] = {'C', 'S', 'L', 'T', 'W', 'G', 'T', '1'};
constexpr std::size_t kChunk = 8;

static_assert(std::endian::native == std::endian::little, "weight archives assume a little-endian host");

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw ConfigError("unsupported tensor dtype in weight set");
  }
}

torch::ScalarType dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw DataError("weight archive: unknown dtype " + s);
}

nlohmann::json fingerprint_config(const ExtractorConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("pretrained");
  j.erase("pretrained_path");
  return j;
}

}  // namespace

void WeightSet::save(const std::filesystem::path& path) const {
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    const auto nbytes = static_cast<std::uint64_t>(t.value.numel() * t.value.element_size());
    entries.push_back({{"name", t.name},
                       {"dtype", dtype_name(t.value.scalar_type())},
                       {"shape", t.value.sizes().vec()},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header = nlohmann::json{{"config", config}, {"tensors", entries}}.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write weights: " + path.string());
  f.write(kMagic, sizeof(kMagic));
  const auto hlen = static_cast<std::uint64_t>(header.size());
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : tensors) {
    const auto c = t.value.contiguous();
    f.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.numel() * c.element_size()));
  }
  if (!f) throw DataError("short write: " + path.string());
}

WeightSet WeightSet::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open weights: " + path.string());
  char magic[8];
  std::uint64_t hlen = 0;
  f.read(magic, sizeof(magic));
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError("not a weight archive: " + path.string());
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("weight archive header: " + std::string(e.what()));
  }
  const auto payload_start = f.tellg();
  WeightSet ws;
  ws.config = h.value("config", nlohmann::json::object());
  for (const auto& e : h.at("tensors")) {
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(e.at("dtype").get<std::string>())));
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size()))
      throw DataError("weight archive: size mismatch for " + e.at("name").get<std::string>());
    f.seekg(payload_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    f.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!f) throw DataError("weight archive truncated: " + path.string());
    ws.tensors.push_back({e.at("name").get<std::string>(), t});
  }
  return ws;
}

const NamedTensor* WeightSet::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

Digest WeightSet::digest() const {
  std::vector<const NamedTensor*> order;
  for (const auto& t : tensors) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->name < b->name; });
  Sha256 h;
  for (const auto* t : order) {
    h.update(t->name);
    h.update(dtype_name(t->value.scalar_type()));
    for (auto d : t->value.sizes()) h.update(std::to_string(d) + ",");
    const auto c = t->value.contiguous();
    h.update(std::span<const std::uint8_t>(static_cast<const std::uint8_t*>(c.data_ptr()),
                                           static_cast<std::size_t>(c.numel() * c.element_size())));
  }
  return h.finish();
}

std::vector<NamedTensor> state_tensors(ConsultNet& net) {
  std::vector<NamedTensor> out;
  for (const auto& p : net->named_parameters(true)) out.push_back({p.key(), p.value().detach().clone().contiguous()});
  for (const auto& b : net->named_buffers(true)) out.push_back({b.key(), b.value().detach().clone().contiguous()});
  return out;
}

torch::Tensor to_tensor(std::span<const GrayImage> images) {
  if (images.empty()) throw InvalidArgument("to_tensor: no images");
  const int h = images[0].height(), w = images[0].width();
  auto t = torch::empty({static_cast<std::int64_t>(images.size()), 1, h, w});
  auto acc = t.accessor<float, 4>();
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].height() != h || images[b].width() != w) throw InvalidArgument("to_tensor: mixed image sizes");
    const auto px = images[b].pixels();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        acc[static_cast<std::int64_t>(b)][0][y][x] = static_cast<float>(px[static_cast<std::size_t>(y) * w + x]);
  }
  return t;
}

torch::Tensor aggregate_layers(const std::vector<torch::Tensor>& stage_maps, int patch_neighborhood) {
  if (stage_maps.empty()) throw InvalidArgument("aggregate_layers: no stage maps");
  const auto h = stage_maps[0].size(2), w = stage_maps[0].size(3);
  std::vector<torch::Tensor> parts;
  for (const auto& m : stage_maps) {
    if (m.size(2) == h && m.size(3) == w) {
      parts.push_back(m);
    } else {
      parts.push_back(F::interpolate(
          m, F::InterpolateFuncOptions().size(std::vector<std::int64_t>{h, w}).mode(torch::kBilinear).align_corners(false)));
    }
  }
  auto cat = torch::cat(parts, 1);
  if (patch_neighborhood <= 1) return cat;
  return F::avg_pool2d(cat, F::AvgPool2dFuncOptions(patch_neighborhood)
                                .stride(1)
                                .padding(patch_neighborhood / 2)
                                .count_include_pad(false));
}

PatchFeatureGrid to_grid(const torch::Tensor& aggregated, std::vector<int> stage_dims, double spatial_scale) {
  TORCH_CHECK(aggregated.dim() == 3, "to_grid expects [D,H,W]");
  const auto hwd = aggregated.permute({1, 2, 0}).contiguous().to(torch::kFloat32);
  PatchFeatureGrid g(static_cast<int>(aggregated.size(1)), static_cast<int>(aggregated.size(2)),
                     static_cast<int>(aggregated.size(0)));
  std::memcpy(g.values.data(), hwd.data_ptr<float>(), g.values.size() * sizeof(float));
  g.stage_dims = std::move(stage_dims);
  g.spatial_scale = spatial_scale;
  return g;
}

HeatMap attention_heatmap(const AttentionState& state, int stage, int out_height, int out_width) {
  const StageAttention* sa = nullptr;
  for (const auto& s : state.stages)
    if (s.stage == stage) sa = &s;
  if (sa == nullptr) throw InvalidArgument("attention_heatmap: stage " + std::to_string(stage) + " not captured");
  if (out_height < 1 || out_width < 1) throw InvalidArgument("attention_heatmap: bad output size");

  auto m = sa->gated.to(torch::kFloat64).mean(0);
  const double lo = m.min().item<double>(), hi = m.max().item<double>();
  m = hi > lo ? (m - lo) / (hi - lo) : torch::zeros_like(m);
  m = F::interpolate(m.unsqueeze(0).unsqueeze(0), F::InterpolateFuncOptions()
                                                      .size(std::vector<std::int64_t>{out_height, out_width})
                                                      .mode(torch::kBilinear)
                                                      .align_corners(false))
          .squeeze()
          .clamp(0.0, 1.0)
          .to(torch::kFloat32)
          .contiguous();
  HeatMap out{out_height, out_width, {}};
  out.values.assign(m.data_ptr<float>(), m.data_ptr<float>() + m.numel());
  return out;
}

Extractor::Extractor(const ExtractorConfig& cfg, std::uint64_t init_seed) : cfg_(cfg), net_(cfg) {
  net_->reset_parameters(init_seed);
  if (cfg_.pretrained) load(WeightSet::load(cfg_.pretrained_path), /*allow_partial=*/true);
  net_->eval();
}

Extractor::Extractor(const ExtractorConfig& cfg, const WeightSet& weights) : cfg_(cfg), net_(cfg) {
  load(weights, /*allow_partial=*/false);
  net_->eval();
}

void Extractor::load(const WeightSet& weights, bool allow_partial) {
  torch::NoGradGuard ng;
  std::map<std::string, torch::Tensor> targets;
  for (const auto& p : net_->named_parameters(true)) targets.emplace(p.key(), p.value());
  for (const auto& b : net_->named_buffers(true)) targets.emplace(b.key(), b.value());

  std::size_t matched = 0;
  for (const auto& [name, dst] : targets) {
    const NamedTensor* src = weights.find(name);
    if (src == nullptr) {
      // Attention taps may be absent from an ImageNet-style trunk snapshot.
      if (allow_partial && name.rfind("attention", 0) == 0) continue;
      throw ConfigError("weight set is missing tensor '" + name + "'");
    }
    if (src->value.sizes() != dst.sizes())
      throw ConfigError("weight set shape mismatch for '" + name + "'");
    dst.copy_(src->value.to(dst.scalar_type()));
    ++matched;
  }
  if (!allow_partial && matched != weights.tensors.size())
    throw ConfigError("weight set has tensors the configured network does not use");
}

WeightSet Extractor::weights() const {
  WeightSet ws;
  ws.config = to_json(cfg_);
  ws.tensors = state_tensors(const_cast<ConsultNet&>(net_));
  return ws;
}

Digest Extractor::fingerprint() const {
  Sha256 h;
  h.update(fingerprint_config(cfg_).dump());
  const auto wd = weights().digest();
  h.update(std::span<const std::uint8_t>(wd.data(), wd.size()));
  return h.finish();
}

void Extractor::calibrate_batchnorm(std::span<const GrayImage> images) {
  if (images.empty()) throw InvalidArgument("calibrate_batchnorm: no images");
  torch::NoGradGuard ng;
  auto bns = net_->batchnorms();
  std::vector<std::optional<double>> saved;
  for (auto* bn : bns) {
    saved.push_back(bn->options.momentum());
    bn->options.momentum(std::nullopt);  // cumulative average
    bn->reset_running_stats();
  }
  net_->train();
  net_->trunk(to_tensor(images));
  net_->eval();
  for (std::size_t i = 0; i < bns.size(); ++i) bns[i]->options.momentum(saved[i]);
}

ExtractResult Extractor::extract(const GrayImage& img) {
  torch::NoGradGuard ng;
  const GrayImage batch[] = {img};
  auto outs = net_->forward(to_tensor(batch));
  ExtractResult r;
  for (auto& o : outs) {
    r.stage_maps.push_back(o.features[0]);
    StageAttention sa;
    sa.stage = o.stage;
    sa.gated = o.features[0];
    if (o.channel_gate.defined()) {
      sa.channel_gate = o.channel_gate[0].flatten();
      sa.spatial_gate = o.spatial_gate[0][0];
    }
    r.attention.stages.push_back(std::move(sa));
  }
  return r;
}

PatchFeatureGrid Extractor::patch_grid(const GrayImage& img) {
  const GrayImage one[] = {img};
  return std::move(patch_grids(one).front());
}

std::vector<PatchFeatureGrid> Extractor::patch_grids(std::span<const GrayImage> images) {
  torch::NoGradGuard ng;
  std::vector<int> dims;
  for (int s : cfg_.stages_used) dims.push_back(cfg_.stage_channels(s));
  std::vector<PatchFeatureGrid> out;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    auto outs = net_->forward(to_tensor(chunk));
    std::vector<torch::Tensor> maps;
    for (auto& o : outs) maps.push_back(o.features);
    const auto agg = aggregate_layers(maps, cfg_.patch_neighborhood);
    const double scale = static_cast<double>(chunk[0].height()) / static_cast<double>(agg.size(2));
    for (std::int64_t b = 0; b < agg.size(0); ++b) out.push_back(to_grid(agg[b], dims, scale));
  }
  return out;
}

}  // namespace consult::extractor
