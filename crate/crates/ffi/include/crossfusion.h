#ifndef CROSSFUSION_H
#define CROSSFUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum XfStatus {
  XF_STATUS_OK = 0,
  // A required pointer argument was null.
  XF_STATUS_NULL_ARGUMENT = 1,
  // A path was not valid UTF-8.
  XF_STATUS_INVALID_PATH = 2,
  XF_STATUS_IO = 3,
  // Malformed bag or checkpoint bytes.
  XF_STATUS_FORMAT = 4,
  // Invalid values, such as a bag whose width does not match the model.
  XF_STATUS_INVALID_INPUT = 5,
  // An output buffer is smaller than required.
  XF_STATUS_BUFFER_TOO_SMALL = 6,
  // The statistic is undefined for the given data.
  XF_STATUS_UNDEFINED = 7,
  XF_STATUS_INTERNAL = 8,
  XF_STATUS_PANIC = 9,
} XfStatus;

// Opaque feature bag.
typedef struct XfBag XfBag;

// Opaque trained model.
typedef struct XfModel XfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid until
// the next failing call on the same thread.
const char *xf_last_error(void);

// Library version as a static NUL-terminated string.
const char *xf_version(void);

// Reads and validates an XFBAG1 file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum XfStatus xf_bag_read(const char *path, struct XfBag **out);

// Decodes and validates XFBAG1 bytes.
//
// # Safety
// `bytes` must point to `len` readable bytes; `out` must be writable.
enum XfStatus xf_bag_decode(const uint8_t *bytes, size_t len, struct XfBag **out);

// Releases a bag; null is ignored.
//
// # Safety
// `bag` must come from this library and not be used afterwards.
void xf_bag_free(struct XfBag *bag);

// Feature width and patch counts (coarse, source, fine) of a bag.
//
// # Safety
// `bag` must be a live handle; `d_in` and `counts` (3 entries) must be writable.
enum XfStatus xf_bag_shape(const struct XfBag *bag, size_t *d_in, size_t *counts);

// Loads an XFCKPT1 checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum XfStatus xf_model_load(const char *path, struct XfModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void xf_model_free(struct XfModel *model);

// Number of hazard bins the model predicts.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum XfStatus xf_model_n_bins(const struct XfModel *model, size_t *out);

// Eval-mode prediction. Writes `n_bins` hazards and survival values and the
// scalar risk (negative summed survival). `hazards`, `survival` or `risk`
// may be null to skip that output.
//
// # Safety
// Handles must be live; non-null buffers must hold `cap` doubles.
enum XfStatus xf_model_predict(const struct XfModel *model,
                               const struct XfBag *bag,
                               double *hazards,
                               double *survival,
                               size_t cap,
                               double *risk);

// Harrell's C-index; higher risk should mean earlier events. `events` holds
// 0 (censored) or non-zero (event).
//
// # Safety
// Each array must hold `n` values; `out` must be writable.
enum XfStatus xf_c_index(const double *risk,
                         const double *time,
                         const uint8_t *events,
                         size_t n,
                         double *out);

// Kaplan-Meier product-limit estimate at the distinct event times.
// `len_out` receives the number of steps; with a too-small `cap` the call
// fails with `BufferTooSmall` after setting `len_out`.
//
// # Safety
// Inputs must hold `n` values; outputs must hold `cap` doubles; `len_out` must be writable.
enum XfStatus xf_km(const double *time,
                    const uint8_t *events,
                    size_t n,
                    double *times_out,
                    double *survival_out,
                    size_t cap,
                    size_t *len_out);

// Two-group log-rank test: chi-square statistic and its one-degree-of-freedom p.
//
// # Safety
// Group arrays must hold `n_a` / `n_b` values; `chi2` and `p` must be writable.
enum XfStatus xf_logrank(const double *time_a,
                         const uint8_t *events_a,
                         size_t n_a,
                         const double *time_b,
                         const uint8_t *events_b,
                         size_t n_b,
                         double *chi2,
                         double *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROSSFUSION_H */
