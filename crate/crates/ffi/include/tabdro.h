#ifndef TABDRO_H
#define TABDRO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. 2, 3 and 4 match the CLI exit codes.
 */
typedef enum TabdroStatus {
  TABDRO_STATUS_OK = 0,
  TABDRO_STATUS_CONFIG = 2,
  TABDRO_STATUS_DATA = 3,
  TABDRO_STATUS_NUMERIC = 4,
  TABDRO_STATUS_NULL_POINTER = 10,
  TABDRO_STATUS_INVALID_UTF8 = 11,
  TABDRO_STATUS_PANIC = 12,
} TabdroStatus;

/**
 * A loaded model bank: base model plus one specialized model per
 * categorical feature.
 */
typedef struct TabdroBank TabdroBank;

/**
 * A loaded downstream classifier.
 */
typedef struct TabdroClassifier TabdroClassifier;

/**
 * A loaded model checkpoint.
 */
typedef struct TabdroModel TabdroModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *tabdro_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tabdro_version(void);

/**
 * Loads a checkpoint directory (`checkpoint.json` + `params.bin`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TabdroStatus tabdro_model_load(const char *dir, struct TabdroModel **out);

/**
 * # Safety
 * `model` must come from [`tabdro_model_load`] or be null.
 */
void tabdro_model_free(struct TabdroModel *model);

/**
 * Latent dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t tabdro_model_latent_dim(const struct TabdroModel *model);

/**
 * Number of categorical features, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t tabdro_model_num_categorical(const struct TabdroModel *model);

/**
 * Number of continuous features, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
size_t tabdro_model_num_continuous(const struct TabdroModel *model);

/**
 * Index of `value` in the vocabulary of categorical feature `feature`.
 *
 * # Safety
 * Strings must be NUL-terminated; `model` live; `out` valid.
 */
enum TabdroStatus tabdro_model_category_index(const struct TabdroModel *model,
                                              const char *feature,
                                              const char *value,
                                              uint32_t *out);

/**
 * Loads a model bank directory.
 *
 * # Safety
 * `dir` must be NUL-terminated and `out` valid.
 */
enum TabdroStatus tabdro_bank_load(const char *dir, struct TabdroBank **out);

/**
 * # Safety
 * `bank` must come from [`tabdro_bank_load`] or be null.
 */
void tabdro_bank_free(struct TabdroBank *bank);

/**
 * Number of specialized models, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be a live handle or null.
 */
size_t tabdro_bank_num_features(const struct TabdroBank *bank);

/**
 * Loads a classifier JSON file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum TabdroStatus tabdro_classifier_load(const char *path, struct TabdroClassifier **out);

/**
 * # Safety
 * `clf` must come from [`tabdro_classifier_load`] or be null.
 */
void tabdro_classifier_free(struct TabdroClassifier *clf);

/**
 * Scores `n_rows` encoded rows.
 *
 * Pass exactly one of `model` (base-mode classifier) or `bank` (bank-mode
 * classifier). `cat` is row-major `n_rows × n_cat` category indices,
 * `cont` row-major `n_rows × n_cont` standardized values (may be null when
 * `n_cont` is 0). `scores_out` receives `n_rows` probabilities; `j_star_out`,
 * if not null, receives the routed feature index per row, or -1.
 *
 * # Safety
 * All buffers must hold the stated number of elements.
 */
enum TabdroStatus tabdro_predict(const struct TabdroModel *model,
                                 const struct TabdroBank *bank,
                                 const struct TabdroClassifier *clf,
                                 const uint32_t *cat,
                                 const double *cont,
                                 size_t n_rows,
                                 size_t n_cat,
                                 size_t n_cont,
                                 double *scores_out,
                                 int64_t *j_star_out);

/**
 * Area under the ROC curve of `scores` against 0/1 `labels`.
 *
 * # Safety
 * Both arrays must hold `n` elements; `out` must be valid.
 */
enum TabdroStatus tabdro_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Runs the full pipeline. `config_json` is a JSON config document or null
 * for defaults; `out_dir`, if not null, replaces its output directory.
 *
 * # Safety
 * Non-null strings must be NUL-terminated.
 */
enum TabdroStatus tabdro_run_pipeline(const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TABDRO_H */
