#ifndef BARYVAE_H
#define BARYVAE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum {
  BARY_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  BARY_STATUS_NULL_POINTER = 1,
  /**
   * Arguments violate a precondition (shapes, weights, positivity).
   */
  BARY_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The computation failed to converge or produced non-finite values.
   */
  BARY_STATUS_NUMERIC_FAILURE = 3,
  /**
   * A Rust panic was caught at the boundary.
   */
  BARY_STATUS_PANIC = 4,
} BaryStatus;

/**
 * Full-covariance Gaussian handle.
 */
typedef struct BaryFullGaussian BaryFullGaussian;

/**
 * Diagonal Gaussian handle.
 */
typedef struct BaryGaussian BaryGaussian;

/**
 * Gaussian mixture handle.
 */
typedef struct BaryMixture BaryMixture;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bary_version(void);

/**
 * Message of the last failed call on this thread, or null after a success.
 *
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *bary_last_error_message(void);

/**
 * Creates a diagonal Gaussian from `dim` means and standard deviations.
 *
 * # Safety
 * `mean` and `sigma` must be valid for `dim` reads; `out` for one write.
 */
BaryStatus bary_gaussian_new(const double *mean,
                             const double *sigma,
                             size_t dim,
                             BaryGaussian **out);

/**
 * Releases a handle from any `bary_gaussian_*` constructor or aggregator. Null is a no-op.
 *
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void bary_gaussian_free(BaryGaussian *g);

/**
 * Dimension of `g`; 0 for null.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
size_t bary_gaussian_dim(const BaryGaussian *g);

/**
 * Copies the mean into `out` (`len` must equal the dimension).
 *
 * # Safety
 * `g` must be a live handle; `out` valid for `len` writes.
 */
BaryStatus bary_gaussian_mean(const BaryGaussian *g, double *out, size_t len);

/**
 * Copies the standard deviations into `out` (`len` must equal the dimension).
 *
 * # Safety
 * `g` must be a live handle; `out` valid for `len` writes.
 */
BaryStatus bary_gaussian_sigma(const BaryGaussian *g, double *out, size_t len);

/**
 * Log density of `g` at `x`.
 *
 * # Safety
 * `g` must be a live handle; `x` valid for `len` reads; `out` for one write.
 */
BaryStatus bary_gaussian_log_density(const BaryGaussian *g,
                                     const double *x,
                                     size_t len,
                                     double *out);

/**
 * Closed-form `KL(p ‖ q)`.
 *
 * # Safety
 * `p`, `q` must be live handles; `out` valid for one write.
 */
BaryStatus bary_kl_diag(const BaryGaussian *p, const BaryGaussian *q, double *out);

/**
 * Closed-form squared 2-Wasserstein distance between diagonal Gaussians.
 *
 * # Safety
 * `p`, `q` must be live handles; `out` valid for one write.
 */
BaryStatus bary_w2sq_diag(const BaryGaussian *p, const BaryGaussian *q, double *out);

/**
 * Product of experts `∝ Π q_m^{α_m}`; `exponents` null means all ones.
 *
 * # Safety
 * `members` must hold `count` live handles; `exponents` null or valid for
 * `count` reads; `out` valid for one write.
 */
BaryStatus bary_poe(const BaryGaussian *const *members,
                    size_t count,
                    const double *exponents,
                    BaryGaussian **out);

/**
 * Diagonal Wasserstein barycenter; `weights` null means uniform.
 *
 * # Safety
 * `members` must hold `count` live handles; `weights` null or valid for
 * `count` reads; `out` valid for one write.
 */
BaryStatus bary_wb_diag(const BaryGaussian *const *members,
                        const double *weights,
                        size_t count,
                        BaryGaussian **out);

/**
 * Mixture of experts; `weights` null means uniform.
 *
 * # Safety
 * `members` must hold `count` live handles; `weights` null or valid for
 * `count` reads; `out` valid for one write.
 */
BaryStatus bary_moe(const BaryGaussian *const *members,
                    const double *weights,
                    size_t count,
                    BaryMixture **out);

/**
 * Mixture over the powerset of products; the empty subset is `prior`
 * (standard normal when null). `2^count` components in ascending mask order.
 *
 * # Safety
 * `members` must hold `count` live handles; `prior` null or live; `out`
 * valid for one write.
 */
BaryStatus bary_mopoe(const BaryGaussian *const *members,
                      size_t count,
                      const BaryGaussian *prior,
                      BaryMixture **out);

/**
 * Mixture over the powerset of Wasserstein barycenters; otherwise as [`bary_mopoe`].
 *
 * # Safety
 * Same contract as [`bary_mopoe`].
 */
BaryStatus bary_mwb(const BaryGaussian *const *members,
                    size_t count,
                    const BaryGaussian *prior,
                    BaryMixture **out);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void bary_mixture_free(BaryMixture *m);

/**
 * Number of components; 0 for null.
 *
 * # Safety
 * `m` must be null or a live handle.
 */
size_t bary_mixture_len(const BaryMixture *m);

/**
 * Weight of component `index`.
 *
 * # Safety
 * `m` must be a live handle; `out` valid for one write.
 */
BaryStatus bary_mixture_weight(const BaryMixture *m, size_t index, double *out);

/**
 * Copy of component `index` as a new handle.
 *
 * # Safety
 * `m` must be a live handle; `out` valid for one write.
 */
BaryStatus bary_mixture_component(const BaryMixture *m, size_t index, BaryGaussian **out);

/**
 * Log density of the mixture at `x`.
 *
 * # Safety
 * `m` must be a live handle; `x` valid for `len` reads; `out` for one write.
 */
BaryStatus bary_mixture_log_density(const BaryMixture *m, const double *x, size_t len, double *out);

/**
 * Creates a full-covariance Gaussian; `cov` is `dim x dim` row-major and must be SPD.
 *
 * # Safety
 * `mean` valid for `dim` reads, `cov` for `dim * dim`; `out` for one write.
 */
BaryStatus bary_full_gaussian_new(const double *mean,
                                  const double *cov,
                                  size_t dim,
                                  BaryFullGaussian **out);

/**
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void bary_full_gaussian_free(BaryFullGaussian *g);

/**
 * Dimension of `g`; 0 for null.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
size_t bary_full_gaussian_dim(const BaryFullGaussian *g);

/**
 * Copies the mean into `out` (`len` must equal the dimension).
 *
 * # Safety
 * `g` must be a live handle; `out` valid for `len` writes.
 */
BaryStatus bary_full_gaussian_mean(const BaryFullGaussian *g, double *out, size_t len);

/**
 * Copies the covariance, row-major, into `out` (`len` must be `dim * dim`).
 *
 * # Safety
 * `g` must be a live handle; `out` valid for `len` writes.
 */
BaryStatus bary_full_gaussian_cov(const BaryFullGaussian *g, double *out, size_t len);

/**
 * Full-covariance Wasserstein barycenter by fixed-point iteration.
 *
 * `weights` null means uniform. Returns `NUMERIC_FAILURE` when the residual
 * stays above `tol·(1 + ‖Σ‖_F)` after `max_iter` iterations.
 *
 * # Safety
 * `members` must hold `count` live handles; `weights` null or valid for
 * `count` reads; `out` valid for one write.
 */
BaryStatus bary_wb_full(const BaryFullGaussian *const *members,
                        const double *weights,
                        size_t count,
                        double tol,
                        size_t max_iter,
                        BaryFullGaussian **out);

/**
 * Squared Bures-Wasserstein distance between full-covariance Gaussians.
 *
 * # Safety
 * `p`, `q` must be live handles; `out` valid for one write.
 */
BaryStatus bary_w2sq_full(const BaryFullGaussian *p, const BaryFullGaussian *q, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BARYVAE_H */
