#ifndef NTD_H
#define NTD_H

/* Generated from the ntd-ffi crate by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function in this library.
 */
typedef enum NtdStatus {
  /**
   * The call succeeded.
   */
  NTD_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NTD_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  NTD_STATUS_INVALID_UTF8 = 2,
  /**
   * The model file could not be read.
   */
  NTD_STATUS_IO_ERROR = 3,
  /**
   * The model document was not valid JSON.
   */
  NTD_STATUS_PARSE_ERROR = 4,
  /**
   * The model failed structural or stochastic validation.
   */
  NTD_STATUS_INVALID_MODEL = 5,
  /**
   * An argument was outside its documented domain (for example `n == 0`).
   */
  NTD_STATUS_INVALID_ARGUMENT = 6,
  /**
   * A matrix that must be invertible was singular to working precision.
   */
  NTD_STATUS_SINGULAR_MATRIX = 7,
  /**
   * An iterative numeric routine failed to converge.
   */
  NTD_STATUS_NO_CONVERGENCE = 8,
  /**
   * A routine requiring a Hurwitz matrix was given a non-Hurwitz one.
   */
  NTD_STATUS_NOT_HURWITZ = 9,
  /**
   * Generic numeric precondition failure.
   */
  NTD_STATUS_NUMERIC_ERROR = 10,
  /**
   * A caller-provided buffer length did not match the required length.
   */
  NTD_STATUS_BUFFER_MISMATCH = 11,
  /**
   * An internal panic was caught at the boundary; this is a bug.
   */
  NTD_STATUS_INTERNAL_PANIC = 12,
} NtdStatus;

/**
 * Opaque handle to a validated model and its derived quantities.
 */
typedef struct NtdModel NtdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load and validate a model from a JSON file on disk.
 *
 * On success writes a new handle to `*out`; the caller owns it and must
 * release it with `ntd_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum NtdStatus ntd_model_load_path(const char *path, struct NtdModel **out);

/**
 * Load and validate a model from a JSON document held in memory.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum NtdStatus ntd_model_load_json(const char *json, struct NtdModel **out);

/**
 * Release a model handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer previously returned by a load function
 * and not yet freed.
 */
void ntd_model_free(struct NtdModel *model);

/**
 * Number of states in the model, or 0 if `model` is null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ntd_model_num_states(const struct NtdModel *model);

/**
 * Number of feature dimensions in the model, or 0 if `model` is null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ntd_model_feature_dim(const struct NtdModel *model);

/**
 * Discount factor of the model, or NaN if `model` is null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double ntd_model_gamma(const struct NtdModel *model);

/**
 * Compute the stability report for horizon `n` and return it as a JSON
 * document written to `*out_json` (caller frees with `ntd_string_free`).
 *
 * # Safety
 * `model` must be a live handle; `out_json` must be a valid pointer.
 */
enum NtdStatus ntd_stability_report_json(const struct NtdModel *model, uint32_t n, char **out_json);

/**
 * Compute the horizon-bound summary (sufficient upper bounds and exact
 * minimal horizons for the three stability criteria) and return it as a
 * JSON document written to `*out_json` (caller frees with
 * `ntd_string_free`).
 *
 * # Safety
 * `model` must be a live handle; `out_json` must be a valid pointer.
 */
enum NtdStatus ntd_bound_set_json(const struct NtdModel *model, uint32_t n_max, char **out_json);

/**
 * Write the fixed-point parameter vector for horizon `n` into `out`, which
 * must point to exactly `len == ntd_model_feature_dim(model)` doubles.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to `len` writable doubles.
 */
enum NtdStatus ntd_fixed_point(const struct NtdModel *model, uint32_t n, double *out, size_t len);

/**
 * Release a string previously returned through an out-pointer by this
 * library. Passing null is a no-op.
 *
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void ntd_string_free(char *s);

/**
 * Message describing the most recent failure on the calling thread, or null
 * if the most recent call succeeded. The pointer is valid until the next
 * `ntd_*` call on the same thread; do not free it.
 */
const char *ntd_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NTD_H */
