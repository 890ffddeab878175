#ifndef LAYERWISE_H
#define LAYERWISE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LwStatus {
  LW_STATUS_OK = 0,
  LW_STATUS_NULL_POINTER = 1,
  LW_STATUS_INVALID_ARGUMENT = 2,
  LW_STATUS_SHAPE = 3,
  LW_STATUS_CONFIG = 4,
  LW_STATUS_DATA = 5,
  LW_STATUS_IO = 6,
  LW_STATUS_CHECKPOINT = 7,
  LW_STATUS_RUNTIME = 8,
  LW_STATUS_PANIC = 9,
} LwStatus;

/**
 * Pre-training schedule selector for [`lw_pretrain`].
 */
typedef enum LwAlgorithm {
  LW_ALGORITHM_GREEDY = 0,
  LW_ALGORITHM_SYNC = 1,
} LwAlgorithm;

/**
 * Unresolved configuration (preset plus overrides).
 */
typedef struct LwConfig LwConfig;

/**
 * Dense row-major matrix.
 */
typedef struct LwMatrix LwMatrix;

/**
 * An unfolded autoencoder.
 */
typedef struct LwModel LwModel;

/**
 * A single RBM together with its own random stream.
 */
typedef struct LwRbm LwRbm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread, or NULL. Valid
 * until the next call into the library from the same thread.
 */
const char *lw_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lw_version(void);

/**
 * Copies `rows * cols` values from `data` into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be writable.
 */
enum LwStatus lw_matrix_new(size_t rows, size_t cols, const double *data, struct LwMatrix **out);

/**
 * # Safety
 * `m` must be a live matrix handle or NULL.
 */
size_t lw_matrix_rows(const struct LwMatrix *m);

/**
 * # Safety
 * `m` must be a live matrix handle or NULL.
 */
size_t lw_matrix_cols(const struct LwMatrix *m);

/**
 * Copies the matrix into `dst`, which must hold `len >= rows * cols` doubles.
 *
 * # Safety
 * `dst` must point to `len` writable doubles.
 */
enum LwStatus lw_matrix_copy_to(const struct LwMatrix *m, double *dst, size_t len);

/**
 * # Safety
 * `m` must be a handle from this library (or NULL) and not used afterwards.
 */
void lw_matrix_free(struct LwMatrix *m);

/**
 * Randomly initialised RBM with default contrastive-divergence settings.
 *
 * # Safety
 * `out` must be writable.
 */
enum LwStatus lw_rbm_new(size_t n_visible, size_t n_hidden, uint64_t seed, struct LwRbm **out);

/**
 * One epoch of CD training on `data`.
 *
 * # Safety
 * Handles must be live.
 */
enum LwStatus lw_rbm_train_epoch(struct LwRbm *rbm, const struct LwMatrix *data, size_t batch_size);

/**
 * Hidden-unit probabilities for every row of `data`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LwStatus lw_rbm_hidden_probs(const struct LwRbm *rbm,
                                  const struct LwMatrix *data,
                                  struct LwMatrix **out);

/**
 * Mean squared reconstruction error per example after one up-down pass.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LwStatus lw_rbm_reconstruction_error(const struct LwRbm *rbm,
                                          const struct LwMatrix *data,
                                          double *out);

/**
 * # Safety
 * `r` must be a handle from this library (or NULL) and not used afterwards.
 */
void lw_rbm_free(struct LwRbm *r);

/**
 * Configuration starting from a built-in preset (`"paper"`, `"desk"`) or,
 * when `preset` is NULL, from the defaults.
 *
 * # Safety
 * `preset` must be NULL or a NUL-terminated string; `out` writable.
 */
enum LwStatus lw_config_new(const char *preset, struct LwConfig **out);

/**
 * Merges TOML text (dotted keys) into the configuration.
 *
 * # Safety
 * Handles must be live; `text` NUL-terminated.
 */
enum LwStatus lw_config_merge(struct LwConfig *cfg, const char *text);

/**
 * Applies one `key=value` override.
 *
 * # Safety
 * Handles must be live; `assignment` NUL-terminated.
 */
enum LwStatus lw_config_set(struct LwConfig *cfg, const char *assignment);

/**
 * # Safety
 * `c` must be a handle from this library (or NULL) and not used afterwards.
 */
void lw_config_free(struct LwConfig *c);

/**
 * Pre-trains with the chosen schedule and returns the unfolded autoencoder.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LwStatus lw_pretrain(const struct LwConfig *cfg,
                          enum LwAlgorithm algorithm,
                          const struct LwMatrix *train,
                          const struct LwMatrix *valid,
                          struct LwModel **out);

/**
 * Runs `epochs` fine-tuning epochs, continuing the model's epoch count.
 *
 * # Safety
 * Handles must be live.
 */
enum LwStatus lw_model_finetune(struct LwModel *model,
                                const struct LwConfig *cfg,
                                const struct LwMatrix *train,
                                const struct LwMatrix *valid,
                                size_t epochs);

/**
 * Reconstruction error per example of `data`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LwStatus lw_model_loss(const struct LwModel *model, const struct LwMatrix *data, double *out);

/**
 * Reconstructions of every row of `data`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LwStatus lw_model_reconstruct(const struct LwModel *model,
                                   const struct LwMatrix *data,
                                   struct LwMatrix **out);

/**
 * Code-layer activations of every row of `data`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum LwStatus lw_model_encode(const struct LwModel *model,
                              const struct LwMatrix *data,
                              struct LwMatrix **out);

/**
 * # Safety
 * Handle must be live; `path` NUL-terminated.
 */
enum LwStatus lw_model_save(const struct LwModel *model, const char *path);

/**
 * Loads a checkpoint of either kind; RBM stacks are unfolded.
 *
 * # Safety
 * `path` NUL-terminated; `out` writable.
 */
enum LwStatus lw_model_load(const char *path, struct LwModel **out);

/**
 * # Safety
 * `m` must be a handle from this library (or NULL) and not used afterwards.
 */
void lw_model_free(struct LwModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYERWISE_H */
