#ifndef SATSTAB_H
#define SATSTAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of an FFI call. Values 2 to 4 match the CLI exit codes.
 */
typedef enum SatstabStatus {
  SATSTAB_STATUS_OK = 0,
  SATSTAB_STATUS_NULL_POINTER = 1,
  SATSTAB_STATUS_INVALID_ARGUMENT = 2,
  SATSTAB_STATUS_NUMERICAL = 3,
  SATSTAB_STATUS_INFEASIBLE = 4,
  SATSTAB_STATUS_PANIC = 5,
} SatstabStatus;

/**
 * Boundary condition selector for [`satstab_eigen_new`].
 */
typedef enum SatstabBoundary {
  SATSTAB_BOUNDARY_HINGED = 0,
  SATSTAB_BOUNDARY_CLAMPED = 1,
  SATSTAB_BOUNDARY_NEUMANN_CH = 2,
} SatstabBoundary;

/**
 * Eigenpairs of the fourth-order operator.
 */
typedef struct SatstabEigen SatstabEigen;

/**
 * Assembled experiment with its synthesis result cached after the first
 * call to [`satstab_experiment_synthesize`].
 */
typedef struct SatstabExperiment SatstabExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful one. The pointer is valid until the next call on this thread.
 */
const char *satstab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *satstab_version(void);

/**
 * Computes the leading `count` eigenpairs, sorted by decreasing eigenvalue.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum SatstabStatus satstab_eigen_new(int bc,
                                     double lambda,
                                     double length,
                                     size_t count,
                                     struct SatstabEigen **out);

/**
 * Number of computed eigenpairs, or 0 for a null handle.
 *
 * # Safety
 * `eigen` must be null or a live handle from [`satstab_eigen_new`].
 */
size_t satstab_eigen_count(const struct SatstabEigen *eigen);

/**
 * Copies the eigenvalues into `out`, which must hold at least
 * `satstab_eigen_count` values.
 *
 * # Safety
 * `eigen` must be a live handle; `out` must be valid for `len` writes.
 */
enum SatstabStatus satstab_eigen_values(const struct SatstabEigen *eigen, double *out, size_t len);

/**
 * Number of nonnegative eigenvalues `n` and the default tail margin
 * `eta = -sigma_{n+1} / 2`.
 *
 * # Safety
 * `eigen` must be a live handle; `n` and `eta` must be writable.
 */
enum SatstabStatus satstab_eigen_unstable(const struct SatstabEigen *eigen, size_t *n, double *eta);

/**
 * # Safety
 * `eigen` must be null or a handle from [`satstab_eigen_new`] not yet freed.
 */
void satstab_eigen_free(struct SatstabEigen *eigen);

/**
 * Componentwise saturation at level `ell` (`INFINITY` for none). `u` and
 * `out` may alias.
 *
 * # Safety
 * `u` must be valid for `len` reads and `out` for `len` writes.
 */
enum SatstabStatus satstab_sat(const double *u, size_t len, double ell, double *out);

/**
 * Parses and validates an experiment configuration (JSON) and assembles
 * the modal system.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum SatstabStatus satstab_experiment_new(const char *config_json, struct SatstabExperiment **out);

/**
 * Dimension of the finite-dimensional controlled part, or 0 for a null handle.
 *
 * # Safety
 * `experiment` must be null or a live handle.
 */
size_t satstab_experiment_dim(const struct SatstabExperiment *experiment);

/**
 * Designs the gain and certificate. Writes the report as JSON (same layout
 * as the CLI's `certificate.json`) to `out_json`.
 *
 * # Safety
 * `experiment` must be a live handle; `out_json` must be writable.
 */
enum SatstabStatus satstab_experiment_synthesize(struct SatstabExperiment *experiment,
                                                 char **out_json);

/**
 * Runs the closed loop from the configured initial state and writes the
 * trajectory CSV to `out_csv`. Blow-up returns `SATSTAB_STATUS_NUMERICAL`.
 *
 * # Safety
 * `experiment` must be a live handle; `out_csv` must be writable.
 */
enum SatstabStatus satstab_experiment_simulate(struct SatstabExperiment *experiment,
                                               char **out_csv);

/**
 * # Safety
 * `experiment` must be null or a handle not yet freed.
 */
void satstab_experiment_free(struct SatstabExperiment *experiment);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void satstab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SATSTAB_H */
