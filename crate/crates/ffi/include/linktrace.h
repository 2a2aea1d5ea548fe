#ifndef LINKTRACE_H
#define LINKTRACE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LtStatus {
  LT_STATUS_OK = 0,
  LT_STATUS_NULL_POINTER = 1,
  LT_STATUS_INVALID_ARGUMENT = 2,
  LT_STATUS_PARSE = 3,
  LT_STATUS_CONFIG = 4,
  LT_STATUS_IO = 5,
  LT_STATUS_NON_IDENTIFIABLE = 6,
  LT_STATUS_DIVERGED = 7,
  LT_STATUS_UNDEFINED_ESTIMATE = 8,
  LT_STATUS_DEGENERATE_WORLD = 9,
  LT_STATUS_UNSUPPORTED = 10,
  LT_STATUS_UTF8 = 11,
  LT_STATUS_OUT_OF_RANGE = 12,
  LT_STATUS_PANIC = 13,
} LtStatus;

/**
 * Fit family.
 */
typedef enum LtMethod {
  LT_METHOD_UNCONDITIONAL = 0,
  LT_METHOD_CONDITIONAL = 1,
} LtMethod;

/**
 * Estimates for every parameter of one sample.
 */
typedef struct LtEstimates LtEstimates;

/**
 * A parsed sample.
 */
typedef struct LtSample LtSample;

/**
 * Output files of a Monte Carlo run, as text.
 */
typedef struct LtSimulation LtSimulation;

/**
 * Options for [`lt_estimate`]. Obtain defaults from
 * [`lt_estimate_options_default`].
 */
typedef struct LtEstimateOptions {
  /**
   * An [`LtMethod`] value.
   */
  int32_t method;
  uint32_t quadrature_nodes;
  /**
   * Bootstrap replicates; 0 skips the bootstrap.
   */
  uint32_t bootstrap_replicates;
  uint64_t seed;
  /**
   * Intervals have level `1 - alpha_level`.
   */
  double alpha_level;
} LtEstimateOptions;

/**
 * One reported parameter. Fields whose `has_*` flag is 0 are NaN.
 */
typedef struct LtEstimate {
  uint8_t has_value;
  double value;
  uint8_t has_sd;
  double sd;
  uint8_t has_ci;
  double ci_lower;
  double ci_upper;
} LtEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the calling thread's last failure, or NULL. The
 * pointer is valid until the next failing call on the same thread.
 */
const char *lt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lt_version(void);

/**
 * Probability of a link pattern under the Rasch model with `q` quadrature
 * nodes. `pattern` holds `n` bytes, nonzero meaning a link.
 *
 * # Safety
 * `alpha` and `pattern` must point to `n` readable elements and `out` to a
 * writable double.
 */
enum LtStatus lt_cell_prob(const double *alpha,
                           const uint8_t *pattern,
                           size_t n,
                           double sigma,
                           uint32_t q,
                           double *out);

/**
 * Parses a sample from text in the `lts-sample 1` format.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum LtStatus lt_sample_parse(const char *text, struct LtSample **out);

/**
 * Releases a sample. NULL is ignored.
 *
 * # Safety
 * `sample` must come from [`lt_sample_parse`] and not be used afterwards.
 */
void lt_sample_free(struct LtSample *sample);

/**
 * Sample dimensions. Any output pointer may be NULL.
 *
 * # Safety
 * `sample` must be a live handle; non-null outputs must be writable.
 */
enum LtStatus lt_sample_counts(const struct LtSample *sample,
                               size_t *n_sampled,
                               size_t *n_frame,
                               size_t *m,
                               size_t *r1,
                               size_t *r2);

/**
 * Seed stored in the sample file, if any. Returns 1 and writes `seed`
 * when present, else 0.
 *
 * # Safety
 * `sample` must be a live handle and `seed` writable or NULL.
 */
uint8_t lt_sample_seed(const struct LtSample *sample, uint64_t *seed);

struct LtEstimateOptions lt_estimate_options_default(void);

/**
 * Fits both portions and computes every estimate, with a bootstrap when
 * `bootstrap_replicates > 0`. Fails with the U1 fit's status when that fit
 * fails; U2 failures leave the affected estimates missing.
 *
 * # Safety
 * `sample` must be a live handle, `options` readable or NULL (defaults), and
 * `out` writable.
 */
enum LtStatus lt_estimate(const struct LtSample *sample,
                          const struct LtEstimateOptions *options,
                          struct LtEstimates **out);

/**
 * Releases an estimate set. NULL is ignored.
 *
 * # Safety
 * `est` must come from [`lt_estimate`] and not be used afterwards.
 */
void lt_estimates_free(struct LtEstimates *est);

/**
 * Number of reported parameters (0 for NULL).
 *
 * # Safety
 * `est` must be a live handle or NULL.
 */
size_t lt_estimates_len(const struct LtEstimates *est);

/**
 * Label of parameter `index` (e.g. `tau_1`, `Ybar_HK`), or NULL when out of
 * range.
 *
 * # Safety
 * `est` must be a live handle or NULL.
 */
const char *lt_estimates_label(const struct LtEstimates *est, size_t index);

/**
 * Reason parameter `index` is missing, or NULL when it has a value.
 *
 * # Safety
 * `est` must be a live handle or NULL.
 */
const char *lt_estimates_failure(const struct LtEstimates *est, size_t index);

/**
 * Index of the parameter with the given label.
 *
 * # Safety
 * `est` must be a live handle, `label` a NUL-terminated string and `index`
 * writable.
 */
enum LtStatus lt_estimates_find(const struct LtEstimates *est, const char *label, size_t *index);

/**
 * Copies parameter `index` into `out`.
 *
 * # Safety
 * `est` must be a live handle and `out` writable.
 */
enum LtStatus lt_estimates_get(const struct LtEstimates *est, size_t index, struct LtEstimate *out);

/**
 * Failed bootstrap replicates, or -1 when no bootstrap ran.
 *
 * # Safety
 * `est` must be a live handle or NULL.
 */
int64_t lt_estimates_boot_failures(const struct LtEstimates *est);

/**
 * Runs a Monte Carlo experiment described by TOML configuration text.
 * Relative population file paths resolve against the working directory.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` writable.
 */
enum LtStatus lt_simulate(const char *config_toml, struct LtSimulation **out);

/**
 * Per-replicate CSV text of a run.
 *
 * # Safety
 * `sim` must be a live handle or NULL.
 */
const char *lt_simulation_replicates_csv(const struct LtSimulation *sim);

/**
 * Metrics CSV text of a run.
 *
 * # Safety
 * `sim` must be a live handle or NULL.
 */
const char *lt_simulation_metrics_csv(const struct LtSimulation *sim);

/**
 * Aligned text table of a run.
 *
 * # Safety
 * `sim` must be a live handle or NULL.
 */
const char *lt_simulation_table(const struct LtSimulation *sim);

/**
 * Releases a run. NULL is ignored.
 *
 * # Safety
 * `sim` must come from [`lt_simulate`] and not be used afterwards.
 */
void lt_simulation_free(struct LtSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINKTRACE_H */
