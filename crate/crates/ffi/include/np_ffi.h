#ifndef NP_FFI_H
#define NP_FFI_H

/* Generated by cbindgen from np-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum NpStatus {
  NP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NP_STATUS_NULL_ARGUMENT = 1,
  /**
   * A path or string argument was not valid UTF-8.
   */
  NP_STATUS_INVALID_UTF8 = 2,
  /**
   * File could not be read or written.
   */
  NP_STATUS_IO = 3,
  /**
   * Checkpoint or sidecar bytes are malformed.
   */
  NP_STATUS_FORMAT = 4,
  /**
   * Buffer or tensor dimensions do not match the model.
   */
  NP_STATUS_SHAPE = 5,
  /**
   * Argument outside its valid domain (e.g. zero samples).
   */
  NP_STATUS_DOMAIN = 6,
  /**
   * A computation produced a non-finite value.
   */
  NP_STATUS_NUMERIC = 7,
  /**
   * Configuration rejected by the model.
   */
  NP_STATUS_CONFIG = 8,
  /**
   * Unexpected internal failure (a panic was caught).
   */
  NP_STATUS_INTERNAL = 9,
} NpStatus;

/**
 * Opaque model handle. Create with `np_model_load`, release with
 * `np_model_free`. Safe to share across threads for prediction.
 */
typedef struct NpHandle NpHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static human-readable description of a status code.
 */
const char *np_status_message(enum NpStatus status);

/**
 * Library version as a static NUL-terminated string.
 */
const char *np_version(void);

/**
 * Loads a checkpoint (plus its JSON config sidecar) into a fresh handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NpStatus np_model_load(const char *path, struct NpHandle **out);

/**
 * Releases a handle. Null is a no-op.
 *
 * # Safety
 * `handle` must have come from `np_model_load` and not be freed twice.
 */
void np_model_free(struct NpHandle *handle);

/**
 * Input dimension of the model's function domain.
 *
 * # Safety
 * `handle` must be a live handle from `np_model_load`.
 */
uint32_t np_model_x_dim(const struct NpHandle *handle);

/**
 * Output dimension of the modelled functions.
 *
 * # Safety
 * `handle` must be a live handle from `np_model_load`.
 */
uint32_t np_model_y_dim(const struct NpHandle *handle);

/**
 * Dimension of the global latent variable.
 *
 * # Safety
 * `handle` must be a live handle from `np_model_load`.
 */
uint32_t np_model_z_dim(const struct NpHandle *handle);

/**
 * Draws `n_samples` functions conditioned on the context and evaluates
 * their predictive mean and std at the targets. Deterministic given `seed`.
 *
 * `context_pairs` holds `n_context` rows of `x_dim + y_dim` values
 * (`n_context` may be zero, falling back to the learned prior);
 * `target_xs` holds `n_targets` rows of `x_dim` values; `out_means` and
 * `out_stds` each receive `n_samples · n_targets · y_dim` values, sample by
 * sample. Either output pointer may be null to skip it.
 *
 * # Safety
 * All non-null pointers must cover the byte ranges implied by the counts.
 */
enum NpStatus np_model_predict(const struct NpHandle *handle,
                               const double *context_pairs,
                               uintptr_t n_context,
                               const double *target_xs,
                               uintptr_t n_targets,
                               uintptr_t n_samples,
                               uint64_t seed,
                               double *out_means,
                               double *out_stds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NP_FFI_H */
