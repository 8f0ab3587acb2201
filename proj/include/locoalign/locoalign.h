// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// C interface to the locoalign library.
//
// Conventions:
//   * Every fallible call returns la_status; on failure la_last_error() holds
//     a message for the calling thread until its next call into the library.
//   * Configuration and results cross the boundary as JSON text. Strings
//     returned through `char**` are owned by the caller: release them with
//     la_string_free. Output pointers are left untouched on failure.
//   * Handles are opaque and immutable once created; they may be shared
//     between threads for concurrent read-only use.

#ifndef LOCOALIGN_LOCOALIGN_H
#define LOCOALIGN_LOCOALIGN_H

#include <stddef.h>

#if defined(_WIN32)
#define LA_API __declspec(dllexport)
#else
#define LA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum la_status {
  LA_OK = 0,
  LA_ERR_USAGE = 1,    /* bad arguments, config or flag values */
  LA_ERR_DATA = 2,     /* unreadable, malformed or mismatched data */
  LA_ERR_NUMERIC = 3,  /* NaN/Inf or degenerate numerics */
  LA_ERR_INTERNAL = 4  /* anything else */
} la_status;

typedef struct la_dataset la_dataset;
typedef struct la_model la_model;

/* Called once per optimizer step with a JSON record
 * {"step","epoch","lr","loss_raw","loss_norm","tau"}. */
typedef void (*la_progress_fn)(const char* record_json, void* user);

LA_API const char* la_version(void);
LA_API const char* la_last_error(void);
LA_API void la_string_free(char* s);

/* Synthetic data. `config_json` holds SynthConfig keys (missing keys take
 * defaults; "{}" or NULL means all defaults). Writes <out_dir>/train,
 * <out_dir>/test and <out_dir>/synth_config.json; raw logs go to `raw_dir`
 * when it is non-NULL. */
LA_API la_status la_synth_generate(const char* config_json, const char* out_dir, const char* raw_dir, char** result_json);

/* Synchronizes, windows and splits every raw trajectory found under
 * `raw_root`. Options: {"test_fraction","seed","hi_hz","lo_hz","cam_hz",
 * "window_s","stride_s"}. */
LA_API la_status la_prepare(const char* raw_root, const char* out_dir, const char* options_json, char** result_json);

LA_API la_status la_dataset_open(const char* dir, la_dataset** out);
LA_API void la_dataset_close(la_dataset* ds);
LA_API size_t la_dataset_size(const la_dataset* ds);
/* Manifest as JSON. */
LA_API la_status la_dataset_info(const la_dataset* ds, char** info_json);

LA_API la_status la_model_load(const char* dir, la_model** out);
LA_API void la_model_free(la_model* m);
/* {"config", "seed", "tau", "parameters"} */
LA_API la_status la_model_info(const la_model* m, char** info_json);

/* Config: {"model": ModelConfig (optional, defaults sized from the dataset),
 * "train": TrainConfig}. Writes loss_curve.csv, train_config.json, final/
 * and best/ under `out_dir`. `progress` may be NULL. */
LA_API la_status la_pretrain(const la_dataset* train, const char* config_json, const char* out_dir, la_progress_fn progress,
                             void* user, char** result_json);

/* Options: {"direction": "s2m"|"m2s", "ks": [..], "gallery_size", "mask_action"}.
 * `out_dir` may be NULL to skip writing report files. */
LA_API la_status la_eval_retrieval(const la_model* m, const la_dataset* test, const char* options_json, const char* out_dir,
                                   char** result_json);

/* Options: {"baseline": "pretrained"|"scratch"|"kbm", "predictor": PredictorConfig,
 * "kbm": KbmParams}. `m` may be NULL only for the kbm baseline. */
LA_API la_status la_eval_dynamics(const la_model* m, const la_dataset* train, const la_dataset* test, const char* options_json,
                                  const char* out_dir, char** result_json);

LA_API la_status la_export_embeddings(const la_model* m, const la_dataset* ds, int mask_action, const char* out_dir,
                                      char** result_json);

/* SVG charts of every loss and error curve under `run_dir`. */
LA_API la_status la_plot(const char* run_dir, const char* out_dir, char** result_json);

#ifdef __cplusplus
}
#endif

#endif  // LOCOALIGN_LOCOALIGN_H
