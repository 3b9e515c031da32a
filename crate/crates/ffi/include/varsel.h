#ifndef VARSEL_H
#define VARSEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VarselStatus {
  VARSEL_STATUS_OK = 0,
  VARSEL_STATUS_NULL_POINTER = 1,
  VARSEL_STATUS_INVALID_INPUT = 2,
  VARSEL_STATUS_CONFIG = 3,
  VARSEL_STATUS_NUMERIC = 4,
  VARSEL_STATUS_BUFFER_TOO_SMALL = 5,
  VARSEL_STATUS_PANIC = 6,
} VarselStatus;

/**
 * A normalized design matrix.
 */
typedef struct VarselDesign VarselDesign;

/**
 * Indices chosen by a selector, ascending, intercept included.
 */
typedef struct VarselSelection VarselSelection;

/**
 * Tuning for [`varsel_select`]. Obtain defaults from [`varsel_select_options_default`].
 */
typedef struct VarselSelectOptions {
  /**
   * Test level, or the FDR level for `fdr`/`fdr2`.
   */
  double alpha;
  /**
   * Known noise level; any non-positive or NaN value means unknown.
   */
  double sigma;
  size_t n_mc;
  size_t n_boot;
  uint64_t seed;
} VarselSelectOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *varsel_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *varsel_version(void);

/**
 * Builds a design from `n × p` column-major values, rescaling every column to
 * unit `‖·‖_n`. With `prepend_intercept` an all-ones column is placed first,
 * giving `p + 1` columns.
 *
 * # Safety
 * `values` must point to `n * p` readable doubles and `out` must be writable.
 */
enum VarselStatus varsel_design_new(size_t n,
                                    size_t p,
                                    const double *values,
                                    bool prepend_intercept,
                                    struct VarselDesign **out);

/**
 * # Safety
 * `design` must come from [`varsel_design_new`] and not be used afterwards.
 */
void varsel_design_free(struct VarselDesign *design);

/**
 * Row count, or 0 for a null handle.
 *
 * # Safety
 * `design` must be null or a live handle.
 */
size_t varsel_design_n(const struct VarselDesign *design);

/**
 * Column count including any intercept, or 0 for a null handle.
 *
 * # Safety
 * `design` must be null or a live handle.
 */
size_t varsel_design_p(const struct VarselDesign *design);

struct VarselSelectOptions varsel_select_options_default(void);

/**
 * Runs the selector named `method` (for example `"procpval"`, `"procbol"`,
 * `"proc_ordered"`, `"fdr2"`, `"lasso"`) on response `y` of length `n`.
 *
 * # Safety
 * `design` must be live, `y` must hold `n` doubles, `method` must be a
 * NUL-terminated string, `opts` may be null for defaults, `out` must be writable.
 */
enum VarselStatus varsel_select(const struct VarselDesign *design,
                                const double *y,
                                size_t n,
                                const char *method,
                                const struct VarselSelectOptions *opts,
                                struct VarselSelection **out);

/**
 * Number of selected indices, or 0 for a null handle.
 *
 * # Safety
 * `sel` must be null or a live handle.
 */
size_t varsel_selection_len(const struct VarselSelection *sel);

/**
 * Copies the zero-based selected column indices into `buf`.
 *
 * # Safety
 * `sel` must be live and `buf` must have room for `cap` values.
 */
enum VarselStatus varsel_selection_indices(const struct VarselSelection *sel,
                                           size_t *buf,
                                           size_t cap);

/**
 * # Safety
 * `sel` must come from [`varsel_select`] and not be used afterwards.
 */
void varsel_selection_free(struct VarselSelection *sel);

/**
 * `P(F > x)` for a Fisher variable with `(d_num, d_den)` degrees of freedom.
 *
 * # Safety
 * `out` must be writable.
 */
enum VarselStatus varsel_fisher_sf(size_t d_num, size_t d_den, double x, double *out);

/**
 * Upper `alpha` quantile of the Fisher distribution.
 *
 * # Safety
 * `out` must be writable.
 */
enum VarselStatus varsel_fisher_quantile(size_t d_num, size_t d_den, double alpha, double *out);

/**
 * Benjamini–Hochberg step-up at level `q`; writes 1 for rejected hypotheses.
 *
 * # Safety
 * `p_values` must hold `len` doubles and `rejected` must have `len` writable bytes.
 */
enum VarselStatus varsel_benjamini_hochberg(const double *p_values,
                                            size_t len,
                                            double q,
                                            uint8_t *rejected);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VARSEL_H */
