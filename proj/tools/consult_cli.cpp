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

// Command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "consult/consult.h"
#include "nlohmann/json.hpp"

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string log_level = "info";
};

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int report(consult_status s) {
  if (s != CONSULT_OK) std::cerr << "error: " << consult_last_error() << "\n";
  return static_cast<int>(s);
}

// Resolved configuration as JSON, with defaults filled in.
nlohmann::json resolved(const std::string& config_text) {
  char* text = nullptr;
  if (consult_config_resolve(config_text.c_str(), &text) != CONSULT_OK) return nullptr;
  auto j = nlohmann::json::parse(text);
  consult_string_free(text);
  return j;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot anomaly detection: contrastive fine-tuning and memory-bank scoring"};
  app.set_version_flag("--version", std::string(consult_version()));
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  Globals g;
  app.add_option("--config", g.config_path, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed (overrides the config)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off");

  std::vector<std::string> images;
  std::string weights, bank_path, grid, heatmap_dir;
  std::optional<double> tau;
  int image_size = 0;

  auto* phantom = app.add_subcommand("phantom-gen", "Write a procedural surrogate corpus");
  auto* synth = app.add_subcommand("synth", "Write one stage-1 training corpus from healthy shots");
  synth->add_option("--images", images, "Healthy shot PNGs")->required();
  auto* train = app.add_subcommand("train", "Fine-tune the extractor on healthy shots");
  train->add_option("--images", images, "Healthy shot PNGs")->required();
  auto* build = app.add_subcommand("build-bank", "Build a memory bank from healthy shots");
  build->add_option("--weights", weights, "Extractor weights")->required()->check(CLI::ExistingFile);
  build->add_option("--images", images, "Healthy shot PNGs")->required();
  auto* score = app.add_subcommand("score", "Score query images against a bank");
  score->add_option("--weights", weights, "Extractor weights")->required()->check(CLI::ExistingFile);
  score->add_option("--bank", bank_path, "Memory bank file")->required()->check(CLI::ExistingFile);
  score->add_option("--images", images, "Query PNGs")->required();
  score->add_option("--heatmap-dir", heatmap_dir, "Write overlay PNGs here");
  score->add_option("--tau", tau, "Decision threshold");
  score->add_option("--image-size", image_size, "Resize queries to this square size");
  auto* eval = app.add_subcommand("eval", "Run the full few-shot protocol and report AUROC");
  auto* sweep = app.add_subcommand("sweep", "Run an ablation grid");
  sweep->add_option("--grid", grid, "Grid JSON file, or the preset name 'loss' or 'model'")->required();

  CLI11_PARSE(app, argc, argv);

  std::string config_text = "{}";
  try {
    if (!g.config_path.empty()) config_text = read_file(g.config_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return CONSULT_ERR_CONFIG;
  }
  if (auto s = consult_set_log_level(g.log_level.c_str()); s != CONSULT_OK) return report(s);
  nlohmann::json cfg = resolved(config_text);
  if (cfg.is_null()) return report(CONSULT_ERR_CONFIG);
  if (g.seed) {
    cfg["seed"] = *g.seed;
    config_text = cfg.dump();
  }
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  auto need_out = [&]() {
    if (g.out_dir.empty()) throw CLI::ValidationError("--out-dir", "required by this subcommand");
    std::filesystem::create_directories(g.out_dir);
  };

  try {
    if (*phantom) {
      need_out();
      const auto corpus_seed = g.seed ? *g.seed : cfg.at("data").at("phantom").at("corpus_seed").get<std::uint64_t>();
      return report(consult_phantom_generate(config_text.c_str(), corpus_seed, g.out_dir.c_str()));
    }
    if (*synth) {
      need_out();
      const auto p = c_strings(images);
      return report(consult_synth(config_text.c_str(), p.data(), p.size(), seed, g.out_dir.c_str()));
    }
    if (*train) {
      need_out();
      const auto p = c_strings(images);
      if (auto s = consult_train(config_text.c_str(), p.data(), p.size(), seed, g.out_dir.c_str(), nullptr);
          s != CONSULT_OK)
        return report(s);
      std::cout << (std::filesystem::path(g.out_dir) / "weights.cwts").string() << "\n";
      return 0;
    }
    if (*build) {
      need_out();
      consult_extractor* ex = nullptr;
      if (auto s = consult_extractor_load(weights.c_str(), &ex); s != CONSULT_OK) return report(s);
      const auto p = c_strings(images);
      const auto& b = cfg.at("bank");
      consult_bank* bank = nullptr;
      auto s = consult_bank_build(ex, p.data(), p.size(), b.at("sampling_ratio").get<double>(),
                                  b.at("k_neighbors").get<int>(), seed, &bank);
      const auto out = (std::filesystem::path(g.out_dir) / "bank.cslt").string();
      if (s == CONSULT_OK) s = consult_bank_save(bank, out.c_str());
      if (s == CONSULT_OK) std::cout << out << " (" << consult_bank_size(bank) << " vectors)\n";
      consult_bank_free(bank);
      consult_extractor_free(ex);
      return report(s);
    }
    if (*score) {
      consult_extractor* ex = nullptr;
      consult_bank* bank = nullptr;
      auto s = consult_extractor_load(weights.c_str(), &ex);
      if (s == CONSULT_OK) s = consult_bank_load(bank_path.c_str(), &bank);
      if (!heatmap_dir.empty()) std::filesystem::create_directories(heatmap_dir);
      if (s == CONSULT_OK) std::cout << "image,score,raw_score" << (tau ? ",anomalous" : "") << "\n";
      for (std::size_t i = 0; s == CONSULT_OK && i < images.size(); ++i) {
        consult_score r{};
        std::string heat;
        if (!heatmap_dir.empty()) heat = (std::filesystem::path(heatmap_dir) / std::filesystem::path(images[i]).filename()).string();
        s = consult_score_image(ex, bank, images[i].c_str(), image_size, heat.empty() ? nullptr : heat.c_str(), &r);
        if (s != CONSULT_OK) break;
        std::printf("%s,%.9g,%.9g", images[i].c_str(), r.score, r.raw_score);
        if (tau) std::printf(",%d", r.score > *tau ? 1 : 0);
        std::printf("\n");
      }
      consult_bank_free(bank);
      consult_extractor_free(ex);
      return report(s);
    }
    if (*eval) {
      need_out();
      double a = 0.0, ar = 0.0;
      if (auto s = consult_run_experiment(config_text.c_str(), g.out_dir.c_str(), &a, &ar); s != CONSULT_OK)
        return report(s);
      std::printf("auroc %.6f\nauroc_raw %.6f\n", a, ar);
      return 0;
    }
    if (*sweep) {
      need_out();
      std::string grid_text;
      if (grid == "loss" || grid == "model")
        grid_text = nlohmann::json{{"preset", grid}}.dump();
      else
        grid_text = read_file(grid);
      std::size_t cells = 0, failed = 0;
      if (auto s = consult_sweep(config_text.c_str(), grid_text.c_str(), g.out_dir.c_str(), &cells, &failed);
          s != CONSULT_OK)
        return report(s);
      std::printf("%zu cells, %zu failed\n", cells, failed);
      return 0;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return CONSULT_ERR_CONFIG;
  }
  return 0;
}
