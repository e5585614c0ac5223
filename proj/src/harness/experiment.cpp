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

#include "harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "harness/phantom.hpp"
#include "log/log.hpp"
#include "synthlab/synthlab.hpp"

namespace consult::harness {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  if (out.empty()) throw DataError("no PNG images in " + dir.string());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

struct RunState {
  std::vector<std::string> completed;
  std::vector<std::string> few_shot;
  int epochs_done = 0;
};

// Runs fn as the named stage; on failure records partial state and rethrows
// with the stage name attached, keeping the error class.
template <typename Fn>
void stage(Stage s, AccessAudit& audit, RunState& state, const fs::path& out_dir, Fn&& fn) {
  audit.set_stage(s);
  auto fail = [&](const std::string& what) {
    json j = {{"stage", to_string(s)},
              {"error", what},
              {"partial",
               {{"completed_stages", state.completed},
                {"few_shot", state.few_shot},
                {"epochs_completed", state.epochs_done}}}};
    try {
      write_json(out_dir / "failure.json", j);
    } catch (const std::exception&) {
    }
    return std::string("stage ") + to_string(s) + ": " + what;
  };
  try {
    fn();
  } catch (const Error& e) {
    throw Error(e.kind(), fail(e.what()));
  } catch (const std::exception& e) {
    throw std::runtime_error(fail(e.what()));
  }
  state.completed.emplace_back(to_string(s));
}

synthlab::GrayImage load(AccessAudit& audit, const fs::path& p, int size) {
  auto img = audit.read_image(p);
  if (size > 0 && (img.height() != size || img.width() != size)) img = synthlab::resize(img, size, size);
  return img;
}

}  // namespace

synthlab::PairedDataset epoch_corpus(const ExperimentConfig& cfg, std::span<const synthlab::GrayImage> few, int epoch) {
  return synthlab::build_pair_dataset(few, cfg.synth.n_normal_aug, cfg.synth.n_anomalous, cfg.synth.defect,
                                      derive_seed(cfg.seed, "synth/epoch", epoch), cfg.synth.augment);
}

PreparedExtractor prepare_extractor(const ExperimentConfig& cfg, std::span<const synthlab::GrayImage> few,
                                    const fs::path& out_dir) {
  if (few.empty()) throw DataError("no few-shot images");
  PreparedExtractor out;
  out.model = std::make_unique<extractor::Extractor>(cfg.extractor, derive_seed(cfg.seed, "extractor/init"));
  if (!cfg.extractor.pretrained) out.model->calibrate_batchnorm(few);
  if (cfg.skip_stage1) {
    if (!out_dir.empty()) trainer::write_stats_csv(out_dir / "epoch_stats.csv", {});
    return out;
  }
  // Only the current epoch's corpus is kept alive.
  std::optional<synthlab::PairedDataset> current;
  int current_key = -1;
  auto source = [&](int epoch) -> const synthlab::PairedDataset& {
    const int key = cfg.synth.regenerate_each_epoch ? epoch : 1;
    if (key != current_key) {
      current = epoch_corpus(cfg, few, key);
      current_key = key;
    }
    return *current;
  };
  trainer::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  trainer::TrainHooks hooks;
  hooks.out_dir = out_dir;
  out.stats = trainer::train_stage1(*out.model, source, tc, hooks).stats;
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg_in, const fs::path& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = cfg_in;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  if (out_dir.empty()) throw ConfigError("run_experiment needs an output directory");
  fs::create_directories(out_dir);

  AccessAudit audit;
  RunState state;
  ExperimentResult res;
  DataConfig& data = res.data;
  std::vector<fs::path> pool, test_healthy, test_anomalous;

  stage(Stage::kSetup, audit, state, out_dir, [&] {
    if (cfg.data.source == "phantom") {
      data = write_phantom_corpus(cfg.data.phantom, cfg.data.phantom.corpus_seed, out_dir / "phantom");
      data.image_size = cfg.data.image_size;
    } else {
      data = cfg.data;
    }
    pool = list_images(data.train_healthy_dir);
    test_healthy = list_images(data.test_healthy_dir);
    test_anomalous = list_images(data.test_anomalous_dir);
    for (const auto& p : test_healthy) audit.forbid(p);
    for (const auto& p : test_anomalous) audit.forbid(p);
    if (!data.test_mask_dir.empty() && fs::is_directory(data.test_mask_dir))
      for (const auto& e : fs::directory_iterator(data.test_mask_dir)) audit.forbid(e.path());
  });

  std::vector<synthlab::GrayImage> few;
  stage(Stage::kSplit, audit, state, out_dir, [&] {
    const auto split = split_few_shot(static_cast<int>(pool.size()), cfg.shots, cfg.seed);
    for (int i : split.few) {
      few.push_back(load(audit, pool[static_cast<std::size_t>(i)], data.image_size));
      res.few_shot_files.push_back(pool[static_cast<std::size_t>(i)].filename().string());
    }
    for (std::size_t i = 1; i < few.size(); ++i)
      if (few[i].height() != few[0].height() || few[i].width() != few[0].width())
        throw DataError("few-shot images differ in size; set data.image_size");
    state.few_shot = res.few_shot_files;
  });

  stage(Stage::kSynth, audit, state, out_dir, [&] {
    if (!cfg.skip_stage1) synthlab::write_dataset(epoch_corpus(cfg, few, 1), out_dir / "synth");
  });

  const auto init_seed = derive_seed(cfg.seed, "extractor/init");
  std::unique_ptr<extractor::Extractor> model;
  stage(Stage::kTrain, audit, state, out_dir, [&] {
    auto prepared = prepare_extractor(cfg, few, out_dir);
    model = std::move(prepared.model);
    res.stats = std::move(prepared.stats);
    state.epochs_done = static_cast<int>(res.stats.size());
    res.weights = model->weights();
    res.weights.save(out_dir / "weights.cwts");
  });

  double tau = 0.0;
  stage(Stage::kBank, audit, state, out_dir, [&] {
    res.bank = bank::build_bank(few, *model, cfg.bank.sampling_ratio, cfg.bank.k_neighbors,
                                derive_seed(cfg.seed, "bank"));
    res.bank.save(out_dir / "bank.cslt");
    // Threshold from augmented healthy shots (held out from the bank).
    std::vector<double> healthy;
    for (int i = 0; i < cfg.bank.tau_samples; ++i) {
      const auto& src = few[static_cast<std::size_t>(i) % few.size()];
      const auto aug = synthlab::augment_normal(src, derive_seed(cfg.seed, "bank/tau", i), cfg.synth.augment);
      healthy.push_back(bank::score_image(aug, res.bank, *model).image_score);
    }
    tau = bank::calibrate_tau(healthy, cfg.bank.tau_quantile);
  });

  MetricsReport& rep = res.report;
  stage(Stage::kScore, audit, state, out_dir, [&] {
    const fs::path heat_dir = out_dir / "heatmaps";
    if (cfg.heatmaps > 0) fs::create_directories(heat_dir);
    int written = 0;
    auto score_set = [&](const std::vector<fs::path>& files, Label label) {
      for (const auto& p : files) {
        const auto img = load(audit, p, data.image_size);
        const auto map = bank::score_image(img, res.bank, *model);
        const std::string name = std::string(label == Label::kAnomalous ? "anomalous/" : "healthy/") +
                                 p.filename().string();
        rep.images.push_back({name, label, map.image_score, map.raw_score, bank::decide(map, tau).is_anomaly});
        if (label == Label::kAnomalous && written < cfg.heatmaps) {
          bank::write_heatmap_overlay(heat_dir / p.filename(), img, map);
          ++written;
        }
      }
    };
    score_set(test_healthy, Label::kHealthy);
    score_set(test_anomalous, Label::kAnomalous);
  });

  stage(Stage::kReport, audit, state, out_dir, [&] {
    std::vector<double> s, r;
    std::vector<Label> l;
    for (const auto& im : rep.images) {
      s.push_back(im.score);
      r.push_back(im.raw_score);
      l.push_back(im.label);
    }
    rep.auroc = auroc(s, l);
    rep.auroc_raw = auroc(r, l);
    rep.tau = tau;
    rep.config = to_json(cfg);
    rep.config_hash = config_hash(cfg);
    rep.git_describe = CONSULT_GIT_DESCRIBE;
    rep.extractor_fingerprint = to_hex(model->fingerprint());
    rep.stage1_skipped = cfg.skip_stage1;
    rep.test_healthy = static_cast<int>(test_healthy.size());
    rep.test_anomalous = static_cast<int>(test_anomalous.size());
    rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(out_dir / "metrics.json", to_json(rep));

    json accesses = json::array();
    for (const auto& a : audit.log()) accesses.push_back({{"stage", to_string(a.stage)}, {"path", a.path}});
    write_json(out_dir / "manifest.json",
               {{"config", rep.config},
                {"config_hash", rep.config_hash},
                {"git_describe", rep.git_describe},
                {"seeds",
                 {{"experiment", cfg.seed},
                  {"extractor_init", init_seed},
                  {"bank", derive_seed(cfg.seed, "bank")},
                  {"corpus", cfg.data.source == "phantom" ? json(cfg.data.phantom.corpus_seed) : json(nullptr)}}},
                {"few_shot", res.few_shot_files},
                {"data", to_json(data)},
                {"weights_digest", to_hex(res.weights.digest())},
                {"extractor_fingerprint", rep.extractor_fingerprint},
                {"bank_size", res.bank.size()},
                {"tau", tau},
                {"test_split", {{"healthy", rep.test_healthy}, {"anomalous", rep.test_anomalous}}},
                {"file_accesses", accesses}});
  });
  res.accesses = audit.log();
  log::info("run finished: AUROC %.4f (raw %.4f), %.1fs", rep.auroc, rep.auroc_raw, rep.runtime_seconds);
  return res;
}

std::vector<json> SweepGrid::cells() const {
  std::vector<json> base = rows.empty() ? std::vector<json>{json::object()} : rows;
  std::vector<json> out;
  for (const auto& row : base) {
    std::vector<json> partial{row};
    for (const auto& [key, values] : axes) {
      std::vector<json> next;
      for (const auto& p : partial)
        for (const auto& v : values) {
          json c = p;
          c[key] = v;
          next.push_back(std::move(c));
        }
      partial = std::move(next);
    }
    out.insert(out.end(), partial.begin(), partial.end());
  }
  return out;
}

SweepGrid loss_ablation_grid() {
  SweepGrid g;
  auto row = [](const char* loss, bool ssl, bool koleo) {
    return json{{"train.loss", loss}, {"train.use_ssl", ssl}, {"train.use_koleo", koleo}};
  };
  g.rows = {row("anchor", false, false), row("tritanh", false, false), row("tritanh", false, true),
            row("tritanh", true, false), row("tritanh", true, true)};
  return g;
}

SweepGrid model_ablation_grid() {
  SweepGrid g;
  g.axes = {{"extractor.backbone_depth", {18, 50}},
            {"extractor.activation", {"relu", "leaky_relu"}},
            {"extractor.use_attention", {false, true}}};
  return g;
}

SweepGrid sweep_grid_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("sweep grid must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (k != "preset" && k != "rows" && k != "axes") throw ConfigError("sweep grid: unknown key '" + k + "'");
  SweepGrid g;
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    if (p == "loss")
      g = loss_ablation_grid();
    else if (p == "model")
      g = model_ablation_grid();
    else
      throw ConfigError("sweep grid: preset must be 'loss' or 'model'");
  }
  if (j.contains("rows")) {
    if (!j.at("rows").is_array()) throw ConfigError("sweep grid: rows must be an array");
    if (!g.rows.empty()) throw ConfigError("sweep grid: rows conflict with the preset's rows");
    for (const auto& r : j.at("rows")) {
      if (!r.is_object()) throw ConfigError("sweep grid: each row must be an object");
      g.rows.push_back(r);
    }
  }
  if (j.contains("axes")) {
    if (!j.at("axes").is_object()) throw ConfigError("sweep grid: axes must be an object");
    for (const auto& [k, v] : j.at("axes").items()) {
      if (!v.is_array() || v.empty()) throw ConfigError("sweep grid: axis '" + k + "' needs a nonempty array");
      g.axes.emplace_back(k, std::vector<json>(v.begin(), v.end()));
    }
  }
  return g;
}

std::vector<SweepCell> sweep_ablation(const json& base_config, const SweepGrid& grid, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<SweepCell> cells;
  const auto overrides = grid.cells();
  for (std::size_t i = 0; i < overrides.size(); ++i) {
    SweepCell cell;
    cell.overrides = overrides[i];
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", i);
    log::info("sweep %s: %s", name, cell.overrides.dump().c_str());
    try {
      const auto cfg = experiment_config_from_json(apply_overrides(base_config, cell.overrides));
      cell.config_hash = config_hash(cfg);
      cell.report = run_experiment(cfg, out_dir / name).report;
    } catch (const Error& e) {
      cell.error = e.what();
      cell.error_code = static_cast<int>(e.kind());
    } catch (const std::exception& e) {
      cell.error = e.what();
      cell.error_code = 1;
    }
    if (!cell.error.empty()) log::warn("sweep %s failed: %s", name, cell.error.c_str());
    cells.push_back(std::move(cell));
    write_sweep_csv(out_dir / "sweep.csv", cells);
  }
  write_sweep_table(out_dir / "sweep_table.csv", cells);
  return cells;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Switch columns: every override key except shots and seed, first-seen order.
std::vector<std::string> switch_columns(const std::vector<SweepCell>& cells) {
  std::vector<std::string> cols;
  for (const auto& c : cells)
    for (const auto& [k, _] : c.overrides.items())
      if (k != "shots" && k != "seed" && std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
  return cols;
}

}  // namespace

void write_sweep_csv(const fs::path& path, const std::vector<SweepCell>& cells) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  const auto cols = switch_columns(cells);
  for (const auto& c : cols) f << c << ',';
  f << "shots,seed,auroc,auroc_raw,config_hash,status,error\n";
  f << std::setprecision(9);
  for (const auto& c : cells) {
    for (const auto& k : cols) f << csv_field(c.overrides.contains(k) ? value_text(c.overrides.at(k)) : "") << ',';
    const json cfg = c.report ? c.report->config : json::object();
    f << (cfg.contains("shots") ? cfg.at("shots").dump() : value_text(c.overrides.value("shots", json(""))))
      << ',' << (cfg.contains("seed") ? cfg.at("seed").dump() : value_text(c.overrides.value("seed", json("")))) << ',';
    if (c.report)
      f << c.report->auroc << ',' << c.report->auroc_raw << ',';
    else
      f << ",,";
    f << c.config_hash << ',' << (c.report ? "ok" : "failed") << ',' << csv_field(c.error) << '\n';
  }
}

void write_sweep_table(const fs::path& path, const std::vector<SweepCell>& cells) {
  const auto cols = switch_columns(cells);
  // row key (switch values) -> shots -> aurocs over seeds
  std::vector<std::vector<std::string>> row_keys;
  std::map<std::vector<std::string>, std::map<int, std::vector<double>>> table;
  std::vector<int> shots;
  for (const auto& c : cells) {
    std::vector<std::string> key;
    for (const auto& k : cols) key.push_back(c.overrides.contains(k) ? value_text(c.overrides.at(k)) : "");
    if (!table.contains(key)) row_keys.push_back(key);
    auto& per_k = table[key];
    if (!c.report) continue;
    const int k = c.report->config.at("shots").get<int>();
    if (std::find(shots.begin(), shots.end(), k) == shots.end()) shots.push_back(k);
    per_k[k].push_back(c.report->auroc);
  }
  std::sort(shots.begin(), shots.end());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  for (const auto& c : cols) f << c << ',';
  for (std::size_t i = 0; i < shots.size(); ++i) f << (i ? "," : "") << 'K' << shots[i];
  f << '\n' << std::setprecision(6);
  for (const auto& key : row_keys) {
    for (const auto& v : key) f << csv_field(v) << ',';
    for (std::size_t i = 0; i < shots.size(); ++i) {
      if (i) f << ',';
      auto it = table[key].find(shots[i]);
      if (it == table[key].end() || it->second.empty()) continue;
      auto v = it->second;
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      f << (n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]));
    }
    f << '\n';
  }
}

}  // namespace consult::harness
