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

#include "trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "log/log.hpp"

#include "common/error.hpp"
#include "common/json_util.hpp"
#include "losses/losses_torch.hpp"

namespace consult::trainer {

using synthlab::PairedDataset;
using synthlab::Provenance;

const char* to_string(ContrastiveLoss l) { return l == ContrastiveLoss::kTritanh ? "tritanh" : "anchor"; }

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (iters_per_epoch < 1) throw ConfigError("train.iters_per_epoch must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must be in [0,1)");
  for (int s : frozen_prefix)
    if (s < 0 || s > 4) throw ConfigError("train.frozen_prefix entries must be in 0..4");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  tritanh.validate();
  anchor.validate();
  sfa.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"iters_per_epoch", c.iters_per_epoch},
          {"seed", c.seed},
          {"loss", to_string(c.loss)},
          {"use_ssl", c.use_ssl},
          {"use_koleo", c.use_koleo},
          {"tritanh", losses::to_json(c.tritanh)},
          {"anchor", losses::to_json(c.anchor)},
          {"sfa", losses::to_json(c.sfa)},
          {"frozen_prefix", c.frozen_prefix},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  constexpr const char* kSection = "train";
  check_keys(j,
             {"epochs", "learning_rate", "beta1", "beta2", "batch_size", "iters_per_epoch", "seed", "loss", "use_ssl",
              "use_koleo", "tritanh", "anchor", "sfa", "frozen_prefix", "checkpoint_every"},
             kSection);
  TrainConfig c;
  c.epochs = get_or(j, "epochs", c.epochs, kSection);
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate, kSection);
  c.beta1 = get_or(j, "beta1", c.beta1, kSection);
  c.beta2 = get_or(j, "beta2", c.beta2, kSection);
  c.batch_size = get_or(j, "batch_size", c.batch_size, kSection);
  c.iters_per_epoch = get_or(j, "iters_per_epoch", c.iters_per_epoch, kSection);
  c.seed = get_or(j, "seed", c.seed, kSection);
  const auto loss = get_or<std::string>(j, "loss", to_string(c.loss), kSection);
  if (loss == "tritanh")
    c.loss = ContrastiveLoss::kTritanh;
  else if (loss == "anchor")
    c.loss = ContrastiveLoss::kAnchor;
  else
    throw ConfigError("train.loss must be 'tritanh' or 'anchor'");
  c.use_ssl = get_or(j, "use_ssl", c.use_ssl, kSection);
  c.use_koleo = get_or(j, "use_koleo", c.use_koleo, kSection);
  if (j.contains("tritanh")) c.tritanh = losses::tritanh_params_from_json(j.at("tritanh"));
  if (j.contains("anchor")) c.anchor = losses::anchor_params_from_json(j.at("anchor"));
  if (j.contains("sfa")) c.sfa = losses::sfa_params_from_json(j.at("sfa"));
  c.frozen_prefix = get_or(j, "frozen_prefix", c.frozen_prefix, kSection);
  c.checkpoint_every = get_or(j, "checkpoint_every", c.checkpoint_every, kSection);
  c.validate();
  return c;
}

bool EpochStats::finite() const {
  for (double v : {total, contrastive, ssl, koleo, d_pull, d_push, grad_norm_mean, grad_norm_max, seconds})
    if (!std::isfinite(v)) return false;
  return true;
}

Triple sample_triple(const PairedDataset& ds, Rng& rng) {
  const auto originals = ds.original_indices();
  if (ds.normals.size() < 2) throw ConfigError("sample_triple: need at least 2 normal images");
  if (originals.empty()) throw ConfigError("sample_triple: no original images to anchor on");
  if (ds.anomalous.empty()) throw ConfigError("sample_triple: no anomalous images");

  Triple t;
  t.anchor = originals[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(originals.size()) - 1))];
  const auto n = static_cast<std::int64_t>(ds.normals.size());
  int pos = static_cast<int>(uniform_int(rng, 0, n - 2));
  if (pos >= t.anchor) ++pos;
  t.positive = pos;
  t.negative = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(ds.anomalous.size()) - 1));
  return t;
}

std::vector<std::uint8_t> mask_to_grid(const synthlab::DefectMask& mask, int grid_height, int grid_width) {
  if (grid_height < 1 || grid_width < 1) throw InvalidArgument("mask_to_grid: grid shape must be positive");
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(grid_height) * grid_width, 0);
  const auto h = static_cast<std::int64_t>(mask.height()), w = static_cast<std::int64_t>(mask.width());
  for (std::int64_t y = 0; y < h; ++y) {
    const auto gy = y * grid_height / h;
    for (std::int64_t x = 0; x < w; ++x) {
      if (!mask.at(static_cast<int>(y), static_cast<int>(x))) continue;
      const auto gx = x * grid_width / w;
      grid[static_cast<std::size_t>(gy * grid_width + gx)] = 1;
    }
  }
  return grid;
}

namespace {

bool is_frozen(const std::string& name, const std::vector<int>& frozen) {
  for (int s : frozen) {
    if (s == 0 && (name.rfind("conv1.", 0) == 0 || name.rfind("bn1.", 0) == 0)) return true;
    if (s > 0 && name.rfind("layer" + std::to_string(s) + ".", 0) == 0) return true;
  }
  return false;
}

void dump_nan(const std::filesystem::path& dir, int epoch, int step, const std::vector<Triple>& triples,
              const PairedDataset& ds) {
  if (dir.empty()) return;
  nlohmann::json j{{"epoch", epoch}, {"step", step}, {"triples", nlohmann::json::array()}};
  for (const auto& t : triples) {
    j["triples"].push_back({{"anchor", t.anchor},
                            {"positive", t.positive},
                            {"positive_seed", ds.normals[static_cast<std::size_t>(t.positive)].seed},
                            {"negative", t.negative},
                            {"negative_seed", ds.anomalous[static_cast<std::size_t>(t.negative)].seed}});
  }
  std::ofstream(dir / "nan_dump.json") << j.dump(2) << "\n";
}

}  // namespace

TrainResult train_stage1(extractor::Extractor& model, const DatasetSource& source, const TrainConfig& cfg,
                         const TrainHooks& hooks) {
  cfg.validate();
  auto& net = model.net();
  // BatchNorm stays in inference mode: statistics are frozen, affine terms train.
  net->eval();

  std::vector<torch::Tensor> params;
  for (auto& p : net->named_parameters(true)) {
    if (is_frozen(p.key(), cfg.frozen_prefix))
      p.value().set_requires_grad(false);
    else
      params.push_back(p.value());
  }
  std::unique_ptr<torch::optim::Adam> opt;
  if (!params.empty())
    opt = std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(cfg.learning_rate).betas({cfg.beta1, cfg.beta2}).eps(1e-8));

  if (!hooks.out_dir.empty()) std::filesystem::create_directories(hooks.out_dir);

  Rng rng = make_rng(derive_seed(cfg.seed, "train/triples"));
  TrainResult result;
  const int pn = model.config().patch_neighborhood;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const PairedDataset& ds = source(epoch);
    EpochStats st;
    st.epoch = epoch;
    double grad_sum = 0.0;

    for (int it = 0; it < cfg.iters_per_epoch; ++it) {
      std::vector<Triple> triples;
      std::vector<synthlab::GrayImage> images;
      for (int b = 0; b < cfg.batch_size; ++b) triples.push_back(sample_triple(ds, rng));
      for (const auto& t : triples) {
        // Pull-side samples must come from the healthy set.
        const auto prov = ds.normals[static_cast<std::size_t>(t.positive)].provenance;
        if (prov == Provenance::kDefect) throw std::logic_error("pull-side sample with defect provenance");
        images.push_back(ds.normals[static_cast<std::size_t>(t.anchor)].image);
      }
      for (const auto& t : triples) images.push_back(ds.normals[static_cast<std::size_t>(t.positive)].image);
      for (const auto& t : triples) images.push_back(ds.anomalous[static_cast<std::size_t>(t.negative)].image);

      auto outs = net->forward(extractor::to_tensor(images));
      std::vector<torch::Tensor> maps;
      for (auto& o : outs) maps.push_back(o.features);
      auto agg = extractor::aggregate_layers(maps, pn);
      const auto b = static_cast<std::int64_t>(triples.size());
      const auto gh = static_cast<int>(agg.size(2)), gw = static_cast<int>(agg.size(3));

      std::vector<std::int64_t> keep;
      std::vector<std::uint8_t> mask_bytes;
      for (std::int64_t i = 0; i < b; ++i) {
        const auto& neg = ds.anomalous[static_cast<std::size_t>(triples[static_cast<std::size_t>(i)].negative)];
        const auto grid = mask_to_grid(neg.mask, gh, gw);
        if (std::none_of(grid.begin(), grid.end(), [](auto v) { return v != 0; })) {
          ++st.skipped;
          continue;
        }
        keep.push_back(i);
        mask_bytes.insert(mask_bytes.end(), grid.begin(), grid.end());
      }
      if (keep.empty()) continue;
      const auto idx = torch::tensor(keep, torch::kLong);
      const auto anchor = agg.slice(0, 0, b).index_select(0, idx);
      const auto positive = agg.slice(0, b, 2 * b).index_select(0, idx);
      const auto negative = agg.slice(0, 2 * b, 3 * b).index_select(0, idx);
      const auto mask = torch::from_blob(mask_bytes.data(), {static_cast<std::int64_t>(keep.size()), gh, gw}, torch::kUInt8)
                            .to(torch::kBool);

      const auto d = losses::autograd::masked_distances(anchor, positive, negative, mask);
      const auto contrastive = cfg.loss == ContrastiveLoss::kTritanh
                                   ? losses::autograd::tritanh_loss(d.d_pull, d.d_push, cfg.tritanh).mean()
                                   : losses::autograd::anchor_loss(d.d_pull, d.d_push, cfg.anchor).mean();
      const auto ssl = losses::autograd::ssl_loss(anchor).mean();
      const auto koleo = losses::autograd::koleo_loss(anchor, cfg.sfa).mean();
      auto total = contrastive;
      if (cfg.use_ssl) total = total + cfg.sfa.gamma1 * ssl;
      if (cfg.use_koleo) total = total + cfg.sfa.gamma2 * koleo;

      const double total_v = total.item<double>();
      if (!std::isfinite(total_v)) {
        dump_nan(hooks.out_dir, epoch, it, triples, ds);
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(it));
      }

      double gnorm = 0.0;
      if (opt) {
        opt->zero_grad();
        total.backward();
        for (const auto& p : params)
          if (p.grad().defined()) gnorm += p.grad().pow(2).sum().item<double>();
        gnorm = std::sqrt(gnorm);
        opt->step();
      }

      st.total += total_v;
      st.contrastive += contrastive.item<double>();
      st.ssl += ssl.item<double>();
      st.koleo += koleo.item<double>();
      st.d_pull += d.d_pull.mean().item<double>();
      st.d_push += d.d_push.mean().item<double>();
      grad_sum += gnorm;
      st.grad_norm_max = std::max(st.grad_norm_max, gnorm);
      ++st.steps;
    }

    if (st.steps > 0) {
      const double n = st.steps;
      st.total /= n;
      st.contrastive /= n;
      st.ssl /= n;
      st.koleo /= n;
      st.d_pull /= n;
      st.d_push /= n;
      st.grad_norm_mean = grad_sum / n;
    }
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("epoch %d/%d total %.5f contrastive %.5f d_pull %.4f d_push %.4f (%.1fs)", epoch,
              cfg.epochs, st.total, st.contrastive, st.d_pull, st.d_push, st.seconds);
    result.stats.push_back(st);
    if (hooks.on_epoch) hooks.on_epoch(st);

    if (!hooks.out_dir.empty()) {
      write_stats_csv(hooks.out_dir / "epoch_stats.csv", result.stats);
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
        model.weights().save(hooks.out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".cwts"));
    }
  }

  for (auto& p : net->parameters()) p.set_requires_grad(true);
  net->eval();
  result.weights = model.weights();
  return result;
}

TrainResult train_stage1(const PairedDataset& ds, const extractor::ExtractorConfig& cfg_e, const TrainConfig& cfg_t,
                         const TrainHooks& hooks) {
  extractor::Extractor model(cfg_e, derive_seed(cfg_t.seed, "extractor/init"));
  if (!cfg_e.pretrained) {
    std::vector<synthlab::GrayImage> originals;
    for (int i : ds.original_indices()) originals.push_back(ds.normals[static_cast<std::size_t>(i)].image);
    model.calibrate_batchnorm(originals);
  }
  return train_stage1(model, [&ds](int) -> const PairedDataset& { return ds; }, cfg_t, hooks);
}

void write_stats_csv(const std::filesystem::path& path, const std::vector<EpochStats>& stats) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "epoch,total,tritanh,ssl,koleo,d_pull,d_push,grad_norm,seconds\n";
  f << std::setprecision(9);
  for (const auto& s : stats)
    f << s.epoch << ',' << s.total << ',' << s.contrastive << ',' << s.ssl << ',' << s.koleo << ',' << s.d_pull << ','
      << s.d_push << ',' << s.grad_norm_mean << ',' << s.seconds << '\n';
}

}  // namespace consult::trainer
