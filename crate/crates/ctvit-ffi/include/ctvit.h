#ifndef CTVIT_H
#define CTVIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every FFI call.
 */
typedef enum CtvitStatus {
  CtvitStatus_Ok = 0,
  CtvitStatus_NullArgument = 1,
  CtvitStatus_InvalidArgument = 2,
  CtvitStatus_IoError = 3,
  CtvitStatus_FormatError = 4,
  CtvitStatus_InternalError = 5,
} CtvitStatus;

/**
 * Opaque trained model: configuration plus parameters.
 */
typedef struct CtvitModel CtvitModel;

/**
 * Per-class and macro metrics of a 2x2 confusion matrix. `has_*` flags
 * mark values whose denominator was empty (the value is then 0).
 */
typedef struct CtvitMetrics {
  double covid_row_accuracy;
  double noncovid_row_accuracy;
  double macro_accuracy;
  double covid_f1;
  double noncovid_f1;
  double macro_f1;
  bool has_covid_row_accuracy;
  bool has_noncovid_row_accuracy;
  bool has_macro_accuracy;
  bool has_covid_f1;
  bool has_noncovid_f1;
  bool has_macro_f1;
} CtvitMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ctvit_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated to
 * `cap` bytes including the terminator). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be NULL (then only the
 * required length is returned).
 */
uintptr_t ctvit_last_error(char *buf, uintptr_t cap);

/**
 * Loads a checkpoint file into an opaque model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_model` a valid pointer.
 * On success `*out_model` owns the model until [`ctvit_model_free`].
 */
enum CtvitStatus ctvit_model_load(const char *path, struct CtvitModel **out_model);

/**
 * Releases a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must be a pointer from [`ctvit_model_load`], not yet freed.
 */
void ctvit_model_free(struct CtvitModel *model);

/**
 * Reports the input geometry: side length of the square plane and the
 * number of slices (1 for the 2D variant).
 *
 * # Safety
 * All pointers must be valid.
 */
enum CtvitStatus ctvit_model_input_size(const struct CtvitModel *model,
                                        uintptr_t *side,
                                        uintptr_t *depth);

/**
 * Scores one input: `pixels` holds `depth * side * side` values in [0, 1],
 * slice-major row-major. Writes the COVID probability to `score_out`.
 *
 * # Safety
 * `pixels` must point to `len` readable doubles; other pointers valid.
 */
enum CtvitStatus ctvit_model_predict(const struct CtvitModel *model,
                                     const double *pixels,
                                     uintptr_t len,
                                     double *score_out);

/**
 * Subject-level vote: counts scores strictly above 0.5 as COVID slices and
 * declares the subject COVID when their fraction strictly exceeds
 * `threshold`. Writes 1/0 to `is_covid_out` and the fraction to
 * `fraction_out` (which may be NULL).
 *
 * # Safety
 * `scores` must point to `n` readable doubles; `is_covid_out` valid.
 */
enum CtvitStatus ctvit_aggregate_subject(const double *scores,
                                         uintptr_t n,
                                         double threshold,
                                         int32_t *is_covid_out,
                                         double *fraction_out);

/**
 * Metrics of a confusion matrix given as 4 row-major counts
 * `[covid_covid, covid_noncovid, noncovid_covid, noncovid_noncovid]`
 * (rows = predicted class, columns = true class).
 *
 * # Safety
 * `counts` must point to 4 readable u64 values; `out` must be valid.
 */
enum CtvitStatus ctvit_metrics(const uint64_t *counts, struct CtvitMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTVIT_H */
