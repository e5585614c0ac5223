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

#ifndef CONSULT_CONSULT_H_
#define CONSULT_CONSULT_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define CONSULT_API __attribute__((visibility("default")))
#else
#define CONSULT_API
#endif

/* Status codes double as process exit codes for the command-line tool. */
typedef enum consult_status {
  CONSULT_OK = 0,
  CONSULT_ERR_INTERNAL = 1,
  CONSULT_ERR_CONFIG = 2,
  CONSULT_ERR_DATA = 3,
  CONSULT_ERR_NUMERICAL = 4
} consult_status;

typedef struct consult_extractor consult_extractor;
typedef struct consult_bank consult_bank;

/* Message of the last failed call on this thread; empty when none. */
CONSULT_API const char* consult_last_error(void);
CONSULT_API const char* consult_version(void);
/* "debug", "info", "warn", "error" or "off". */
CONSULT_API consult_status consult_set_log_level(const char* level);

/* Experiment configuration documents are JSON text with per-module sections
   (data, synth, extractor, train, bank). NULL or "" means all defaults. */
CONSULT_API consult_status consult_config_resolve(const char* config_json, char** resolved_json);
CONSULT_API void consult_string_free(char* s);

/* ---- data ---- */

/* Writes a surrogate corpus (train/healthy, test/{healthy,anomalous,masks})
   from the config's data.phantom section. */
CONSULT_API consult_status consult_phantom_generate(const char* config_json, uint64_t seed, const char* out_dir);

/* One stage-1 corpus (augmented normals plus synthetic defects) of the given
   healthy shots, written as PNGs with manifest.json. */
CONSULT_API consult_status consult_synth(const char* config_json, const char* const* image_paths, size_t n_images,
                                         uint64_t seed, const char* out_dir);

/* ---- extractor ---- */

/* Seeded extractor from the config's extractor section, BatchNorm statistics
   calibrated on the given images (may be empty). */
CONSULT_API consult_status consult_extractor_create(const char* config_json, uint64_t seed,
                                                    const char* const* calib_paths, size_t n_calib,
                                                    consult_extractor** out);
CONSULT_API consult_status consult_extractor_load(const char* weights_path, consult_extractor** out);
CONSULT_API consult_status consult_extractor_save(const consult_extractor* ex, const char* weights_path);
/* 64 hex characters plus terminator. */
CONSULT_API consult_status consult_extractor_fingerprint(const consult_extractor* ex, char out_hex[65]);
CONSULT_API void consult_extractor_free(consult_extractor* ex);

/* Fine-tunes a seeded extractor on the given healthy shots; writes
   epoch_stats.csv and weights.cwts under out_dir. */
CONSULT_API consult_status consult_train(const char* config_json, const char* const* image_paths, size_t n_images,
                                         uint64_t seed, const char* out_dir, consult_extractor** out);

/* ---- memory bank ---- */

CONSULT_API consult_status consult_bank_build(consult_extractor* ex, const char* const* image_paths, size_t n_images,
                                              double sampling_ratio, int k_neighbors, uint64_t seed,
                                              consult_bank** out);
CONSULT_API consult_status consult_bank_load(const char* path, consult_bank** out);
CONSULT_API consult_status consult_bank_save(const consult_bank* bank, const char* path);
CONSULT_API size_t consult_bank_size(const consult_bank* bank);
CONSULT_API void consult_bank_free(consult_bank* bank);

typedef struct consult_score {
  double score;     /* reweighted image score */
  double raw_score; /* max patch nearest-neighbour distance */
  int argmax_row;   /* grid cell of the maximum */
  int argmax_col;
} consult_score;

/* image_size > 0 resizes the query to a square of that side first.
   heatmap_path may be NULL; otherwise an overlay PNG is written. */
CONSULT_API consult_status consult_score_image(consult_extractor* ex, const consult_bank* bank, const char* image_path,
                                               int image_size, const char* heatmap_path, consult_score* out);

/* ---- evaluation ---- */

CONSULT_API consult_status consult_calibrate_tau(const double* scores, size_t n, double q, double* tau);
/* labels: 0 healthy, 1 anomalous. */
CONSULT_API consult_status consult_auroc(const double* scores, const int* labels, size_t n, double* out);

/* Full protocol; writes metrics.json and manifest.json under out_dir. */
CONSULT_API consult_status consult_run_experiment(const char* config_json, const char* out_dir, double* auroc,
                                                  double* auroc_raw);
/* grid_json: {"preset": "loss"|"model", "rows": [...], "axes": {...}}.
   n_failed receives the number of cells that did not complete. */
CONSULT_API consult_status consult_sweep(const char* config_json, const char* grid_json, const char* out_dir,
                                         size_t* n_cells, size_t* n_failed);

/* ---- objectives (scalar forms) ---- */

CONSULT_API consult_status consult_tritanh_loss(double d_pull, double d_push, double lambda0, double lambda1,
                                                double m0, double m1, double* out);
CONSULT_API consult_status consult_anchor_loss(double d_pull, double d_push, double alpha0, double alpha1, double m,
                                               double* out);

#ifdef __cplusplus
}
#endif

#endif /* CONSULT_CONSULT_H_ */
