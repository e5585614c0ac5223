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

#include "consult/consult.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "bank/bank.hpp"
#include "common/error.hpp"
#include "extractor/extractor.hpp"
#include "harness/config.hpp"
#include "harness/experiment.hpp"
#include "harness/metrics.hpp"
#include "harness/phantom.hpp"
#include "log/log.hpp"
#include "losses/losses.hpp"

using namespace consult;

struct consult_extractor {
  std::unique_ptr<extractor::Extractor> impl;
};

struct consult_bank {
  bank::MemoryBank impl;
};

namespace {

thread_local std::string g_last_error;

consult_status fail(consult_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs fn, mapping exceptions to status codes.
template <typename Fn>
consult_status guarded(Fn&& fn) noexcept {
  try {
    g_last_error.clear();
    fn();
    return CONSULT_OK;
  } catch (const Error& e) {
    return fail(static_cast<consult_status>(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(CONSULT_ERR_CONFIG, e.what());
  } catch (const std::exception& e) {
    return fail(CONSULT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CONSULT_ERR_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw InvalidArgument(std::string(what) + " must not be NULL");
}

harness::ExperimentConfig parse_config(const char* text) {
  if (text == nullptr || *text == '\0') return harness::experiment_config_from_json(nlohmann::json::object());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return harness::experiment_config_from_json(j);
}

std::vector<synthlab::GrayImage> read_images(const char* const* paths, size_t n, int size) {
  if (n > 0) require(paths, "image_paths");
  std::vector<synthlab::GrayImage> out;
  for (size_t i = 0; i < n; ++i) {
    require(paths[i], "image path");
    auto img = synthlab::read_png(paths[i]);
    if (size > 0 && (img.height() != size || img.width() != size)) img = synthlab::resize(img, size, size);
    out.push_back(std::move(img));
  }
  return out;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* consult_last_error(void) { return g_last_error.c_str(); }

const char* consult_version(void) { return CONSULT_GIT_DESCRIBE; }

consult_status consult_set_log_level(const char* level) {
  return guarded([&] {
    require(level, "level");
    try {
      log::set_level(log::parse_level(level));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  });
}

consult_status consult_config_resolve(const char* config_json, char** resolved_json) {
  return guarded([&] {
    require(resolved_json, "resolved_json");
    *resolved_json = dup_string(harness::to_json(parse_config(config_json)).dump(2));
  });
}

void consult_string_free(char* s) { std::free(s); }

consult_status consult_phantom_generate(const char* config_json, uint64_t seed, const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    const auto cfg = parse_config(config_json);
    harness::write_phantom_corpus(cfg.data.phantom, seed, out_dir);
  });
}

consult_status consult_synth(const char* config_json, const char* const* image_paths, size_t n_images, uint64_t seed,
                             const char* out_dir) {
  return guarded([&] {
    require(out_dir, "out_dir");
    auto cfg = parse_config(config_json);
    cfg.seed = seed;
    const auto few = read_images(image_paths, n_images, cfg.data.image_size);
    if (few.empty()) throw DataError("synth needs at least one healthy image");
    synthlab::write_dataset(harness::epoch_corpus(cfg, few, 1), out_dir);
  });
}

consult_status consult_extractor_create(const char* config_json, uint64_t seed, const char* const* calib_paths,
                                        size_t n_calib, consult_extractor** out) {
  return guarded([&] {
    require(out, "out");
    const auto cfg = parse_config(config_json);
    auto ex = std::make_unique<consult_extractor>();
    ex->impl = std::make_unique<extractor::Extractor>(cfg.extractor, seed);
    const auto calib = read_images(calib_paths, n_calib, cfg.data.image_size);
    if (!calib.empty()) ex->impl->calibrate_batchnorm(calib);
    *out = ex.release();
  });
}

consult_status consult_extractor_load(const char* weights_path, consult_extractor** out) {
  return guarded([&] {
    require(weights_path, "weights_path");
    require(out, "out");
    const auto ws = extractor::WeightSet::load(weights_path);
    const auto cfg = extractor::extractor_config_from_json(ws.config);
    auto ex = std::make_unique<consult_extractor>();
    ex->impl = std::make_unique<extractor::Extractor>(cfg, ws);
    *out = ex.release();
  });
}

consult_status consult_extractor_save(const consult_extractor* ex, const char* weights_path) {
  return guarded([&] {
    require(ex, "extractor");
    require(weights_path, "weights_path");
    ex->impl->weights().save(weights_path);
  });
}

consult_status consult_extractor_fingerprint(const consult_extractor* ex, char out_hex[65]) {
  return guarded([&] {
    require(ex, "extractor");
    require(out_hex, "out_hex");
    const auto hex = to_hex(ex->impl->fingerprint());
    std::memcpy(out_hex, hex.c_str(), 65);
  });
}

void consult_extractor_free(consult_extractor* ex) { delete ex; }

consult_status consult_train(const char* config_json, const char* const* image_paths, size_t n_images, uint64_t seed,
                             const char* out_dir, consult_extractor** out) {
  return guarded([&] {
    require(out_dir, "out_dir");
    auto cfg = parse_config(config_json);
    cfg.seed = seed;
    cfg.train.seed = seed;
    const auto few = read_images(image_paths, n_images, cfg.data.image_size);
    std::filesystem::create_directories(out_dir);
    auto prepared = harness::prepare_extractor(cfg, few, out_dir);
    prepared.model->weights().save(std::filesystem::path(out_dir) / "weights.cwts");
    if (out != nullptr) {
      auto ex = std::make_unique<consult_extractor>();
      ex->impl = std::move(prepared.model);
      *out = ex.release();
    }
  });
}

consult_status consult_bank_build(consult_extractor* ex, const char* const* image_paths, size_t n_images,
                                  double sampling_ratio, int k_neighbors, uint64_t seed, consult_bank** out) {
  return guarded([&] {
    require(ex, "extractor");
    require(out, "out");
    const auto few = read_images(image_paths, n_images, 0);
    auto b = std::make_unique<consult_bank>();
    b->impl = bank::build_bank(few, *ex->impl, sampling_ratio, k_neighbors, seed);
    *out = b.release();
  });
}

consult_status consult_bank_load(const char* path, consult_bank** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto b = std::make_unique<consult_bank>();
    b->impl = bank::MemoryBank::load(path);
    *out = b.release();
  });
}

consult_status consult_bank_save(const consult_bank* b, const char* path) {
  return guarded([&] {
    require(b, "bank");
    require(path, "path");
    b->impl.save(path);
  });
}

size_t consult_bank_size(const consult_bank* b) { return b == nullptr ? 0 : b->impl.size(); }

void consult_bank_free(consult_bank* b) { delete b; }

consult_status consult_score_image(consult_extractor* ex, const consult_bank* b, const char* image_path,
                                   int image_size, const char* heatmap_path, consult_score* out) {
  return guarded([&] {
    require(ex, "extractor");
    require(b, "bank");
    require(image_path, "image_path");
    require(out, "out");
    auto img = synthlab::read_png(image_path);
    if (image_size > 0 && (img.height() != image_size || img.width() != image_size))
      img = synthlab::resize(img, image_size, image_size);
    const auto map = bank::score_image(img, b->impl, *ex->impl);
    if (heatmap_path != nullptr) bank::write_heatmap_overlay(heatmap_path, img, map);
    out->score = map.image_score;
    out->raw_score = map.raw_score;
    out->argmax_row = map.argmax_cell / map.width;
    out->argmax_col = map.argmax_cell % map.width;
  });
}

consult_status consult_calibrate_tau(const double* scores, size_t n, double q, double* tau) {
  return guarded([&] {
    require(tau, "tau");
    if (n > 0) require(scores, "scores");
    *tau = bank::calibrate_tau(std::span<const double>(scores, n), q);
  });
}

consult_status consult_auroc(const double* scores, const int* labels, size_t n, double* out) {
  return guarded([&] {
    require(out, "out");
    if (n > 0) {
      require(scores, "scores");
      require(labels, "labels");
    }
    std::vector<harness::Label> l(n);
    for (size_t i = 0; i < n; ++i) {
      if (labels[i] != 0 && labels[i] != 1) throw InvalidArgument("labels must be 0 or 1");
      l[i] = labels[i] ? harness::Label::kAnomalous : harness::Label::kHealthy;
    }
    *out = harness::auroc(std::span<const double>(scores, n), l);
  });
}

consult_status consult_run_experiment(const char* config_json, const char* out_dir, double* auroc, double* auroc_raw) {
  return guarded([&] {
    require(out_dir, "out_dir");
    const auto r = harness::run_experiment(parse_config(config_json), out_dir);
    if (auroc != nullptr) *auroc = r.report.auroc;
    if (auroc_raw != nullptr) *auroc_raw = r.report.auroc_raw;
  });
}

consult_status consult_sweep(const char* config_json, const char* grid_json, const char* out_dir, size_t* n_cells,
                             size_t* n_failed) {
  return guarded([&] {
    require(grid_json, "grid_json");
    require(out_dir, "out_dir");
    const auto base = harness::to_json(parse_config(config_json));
    nlohmann::json g;
    try {
      g = nlohmann::json::parse(grid_json);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("grid is not valid JSON: ") + e.what());
    }
    const auto cells = harness::sweep_ablation(base, harness::sweep_grid_from_json(g), out_dir);
    size_t failed = 0;
    for (const auto& c : cells) failed += c.report ? 0 : 1;
    if (n_cells != nullptr) *n_cells = cells.size();
    if (n_failed != nullptr) *n_failed = failed;
  });
}

consult_status consult_tritanh_loss(double d_pull, double d_push, double lambda0, double lambda1, double m0, double m1,
                                    double* out) {
  return guarded([&] {
    require(out, "out");
    losses::TritanhParams p{lambda0, lambda1, m0, m1};
    p.validate();
    *out = losses::tritanh_loss({d_pull, d_push, 0, 0}, p);
  });
}

consult_status consult_anchor_loss(double d_pull, double d_push, double alpha0, double alpha1, double m, double* out) {
  return guarded([&] {
    require(out, "out");
    losses::AnchorParams p{alpha0, alpha1, m};
    p.validate();
    *out = losses::anchor_loss({d_pull, d_push, 0, 0}, p);
  });
}

}  // extern "C"
