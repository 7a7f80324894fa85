#ifndef EPLKIT_H
#define EPLKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum EplStatus {
  EPL_STATUS_OK = 0,
  /**
   * Invalid argument or input document.
   */
  EPL_STATUS_INVALID = 2,
  /**
   * Numeric failure (overflow, divergence, unbounded loss).
   */
  EPL_STATUS_NUMERIC = 3,
  /**
   * A required pointer was null.
   */
  EPL_STATUS_NULL_POINTER = 4,
  /**
   * An internal panic was caught.
   */
  EPL_STATUS_PANIC = 5,
} EplStatus;

/**
 * A loss function.
 */
typedef struct EplLoss EplLoss;

/**
 * A posterior distribution.
 */
typedef struct EplPosterior EplPosterior;

/**
 * The optimal action and how it was found.
 */
typedef struct EplDecision {
  double action;
  double expected_loss;
  /**
   * 1 when a closed form was used, 0 for the numeric minimizer.
   */
  int32_t closed_form;
  /**
   * Minimizer iterations; 0 for closed forms.
   */
  uint32_t iterations;
} EplDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *epl_version(void);

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *epl_last_error_message(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EplStatus epl_posterior_gaussian(double mean, double sd, struct EplPosterior **out);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum EplStatus epl_posterior_gamma(double shape, double rate, struct EplPosterior **out);

/**
 * Weighted draws; `weights` may be null for equal weights.
 *
 * # Safety
 * `values` (and `weights` when non-null) must point to `len` readable
 * doubles; `out` must be writable.
 */
enum EplStatus epl_posterior_samples(const double *values,
                                     const double *weights,
                                     size_t len,
                                     struct EplPosterior **out);

/**
 * # Safety
 * `p` must be null or a handle from this library not yet freed.
 */
void epl_posterior_free(struct EplPosterior *p);

/**
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum EplStatus epl_posterior_mean(const struct EplPosterior *p, double *out);

/**
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum EplStatus epl_posterior_quantile(const struct EplPosterior *p, double q, double *out);

/**
 * Parse a loss from its TOML document form, e.g. `family = "linex"` with
 * `params = { psi = -2.0 }`.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` writable.
 */
enum EplStatus epl_loss_from_toml(const char *text, struct EplLoss **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum EplStatus epl_loss_sel(struct EplLoss **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum EplStatus epl_loss_linex(double psi, struct EplLoss **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum EplStatus epl_loss_quantile(double q, struct EplLoss **out);

/**
 * # Safety
 * `l` must be null or a handle from this library not yet freed.
 */
void epl_loss_free(struct EplLoss *l);

/**
 * `L(a, y)`.
 *
 * # Safety
 * `l` must be a live handle and `out` writable.
 */
enum EplStatus epl_loss_eval(const struct EplLoss *l, double a, double y, double *out);

/**
 * `E(L(a, Y) | z)`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum EplStatus epl_expected_loss(const struct EplLoss *l,
                                 const struct EplPosterior *p,
                                 double a,
                                 double *out);

/**
 * The action minimizing expected posterior loss. With `force_numeric`
 * nonzero the closed forms are skipped.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum EplStatus epl_optimize(const struct EplLoss *l,
                            const struct EplPosterior *p,
                            int32_t force_numeric,
                            struct EplDecision *out);

/**
 * LINEX `ψ` for an upper-tail mass (e.g. 0.03) and posterior sd.
 *
 * # Safety
 * `out` must be writable.
 */
enum EplStatus epl_calibrate_linex(double tail_mass,
                                   double sigma,
                                   int32_t paper_exact,
                                   double *out);

/**
 * Quantile level `1 - prevention_share`.
 *
 * # Safety
 * `out` must be writable.
 */
enum EplStatus epl_calibrate_quantile(double prevention_share, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPLKIT_H */
