#ifndef FGSSA_H
#define FGSSA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_ARGUMENT = 2,
  FG_STATUS_SHAPE = 3,
  FG_STATUS_NON_FINITE = 4,
  FG_STATUS_IO = 5,
  FG_STATUS_FORMAT = 6,
  FG_STATUS_RUNTIME = 7,
  FG_STATUS_PANIC = 8,
} FgStatus;

/**
 * Opaque windowed dataset.
 */
typedef struct FgDataset FgDataset;

/**
 * Opaque trained model.
 */
typedef struct FgModel FgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *fg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fg_version(void);

/**
 * Builds an untrained model with default layer sizes for the given shape.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum FgStatus fg_model_new(size_t window_len,
                           size_t n_signals,
                           size_t n_classes,
                           size_t conv_size,
                           size_t n_filters,
                           uint64_t seed,
                           struct FgModel **out);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FgStatus fg_model_load(const char *path, struct FgModel **out);

/**
 * Writes a JSON checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum FgStatus fg_model_save(const struct FgModel *model, const char *path);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void fg_model_free(struct FgModel *model);

/**
 * Writes window length, signal count, class count and feature length to the
 * non-NULL outputs.
 *
 * # Safety
 * `model` must come from this library; each output pointer may be NULL.
 */
enum FgStatus fg_model_shape(const struct FgModel *model,
                             size_t *window_len,
                             size_t *n_signals,
                             size_t *n_classes,
                             size_t *feature_len);

/**
 * Class probabilities for one window laid out row-major as `[time][signal]`.
 * `probs` receives `n_classes` values; `class_out` (may be NULL) the predicted class.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum FgStatus fg_model_predict(const struct FgModel *model,
                               const double *window,
                               size_t window_len,
                               double *probs,
                               size_t probs_len,
                               size_t *class_out);

/**
 * Grad-CAM vectors for one window: `out` receives `n_signals * feature_len` values,
 * signal-major. `class_out` (may be NULL) receives the estimated class.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum FgStatus fg_model_gradcam(const struct FgModel *model,
                               const double *window,
                               size_t window_len,
                               double *out,
                               size_t out_len,
                               size_t *class_out);

/**
 * Reads a CSV (header = signal names + `label`) and cuts it into non-overlapping
 * windows of `window_len` rows.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FgStatus fg_dataset_load_csv(const char *path, size_t window_len, struct FgDataset **out);

/**
 * Loads a dataset snapshot written by the `synth` command or the library.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FgStatus fg_dataset_load_snapshot(const char *path, struct FgDataset **out);

/**
 * Releases a dataset. NULL is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void fg_dataset_free(struct FgDataset *dataset);

/**
 * Writes window count, window length, signal count and class count to the
 * non-NULL outputs.
 *
 * # Safety
 * `dataset` must come from this library; each output pointer may be NULL.
 */
enum FgStatus fg_dataset_shape(const struct FgDataset *dataset,
                               size_t *n_windows,
                               size_t *window_len,
                               size_t *n_signals,
                               size_t *n_classes);

/**
 * Signal importance vector of `model` over every window of `dataset`; `out`
 * receives `n_signals` values.
 *
 * # Safety
 * Handles must come from this library; `out` must hold `out_len` values.
 */
enum FgStatus fg_siv(const struct FgModel *model,
                     const struct FgDataset *dataset,
                     double *out,
                     size_t out_len);

/**
 * Splits `dataset` (seeded by the configuration's seed), runs greedy selection with
 * subset limit `gamma` and returns the trace as JSON in `out_json` (release with
 * [`fg_string_free`]). `config_json` is a serialized selection configuration; NULL
 * selects default layer sizes and training settings.
 *
 * # Safety
 * Handles must come from this library; `config_json` may be NULL or a
 * NUL-terminated string; `out_json` must be writable.
 */
enum FgStatus fg_select(const struct FgDataset *dataset,
                        size_t gamma,
                        const char *config_json,
                        char **out_json);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void fg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FGSSA_H */
