/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef FIBERMIMO_H
#define FIBERMIMO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FmStatus {
  FM_STATUS_OK = 0,
  FM_STATUS_NULL_POINTER = 1,
  FM_STATUS_INVALID_PARAMETER = 2,
  /**
   * Saddle solve or Hessian evaluation failed.
   */
  FM_STATUS_SOLVER = 3,
  /**
   * Monte Carlo run aborted (rejection limit or eigensolver failure).
   */
  FM_STATUS_ABORTED = 4,
  /**
   * Singular channel realization or resolvent.
   */
  FM_STATUS_SINGULAR = 5,
  FM_STATUS_INTERNAL = 6,
} FmStatus;

typedef enum FmVarianceMethod {
  FM_VARIANCE_METHOD_ANALYTIC = 0,
  FM_VARIANCE_METHOD_FINITE_DIFFERENCE = 1,
  FM_VARIANCE_METHOD_MONTE_CARLO = 2,
} FmVarianceMethod;

/**
 * Channel parameters and deterministic profile.
 */
typedef struct FmChannel FmChannel;

/**
 * Completed Monte Carlo run with its retained samples.
 */
typedef struct FmEnsemble FmEnsemble;

typedef struct FmVariance {
  double var_i1;
  double var_i2;
  double covar;
  double var_total;
  double det_sigma_i1;
  double det_sigma_i2;
  /**
   * NaN when the covariance came from Monte Carlo.
   */
  double det_sigma_cov;
  enum FmVarianceMethod method;
} FmVariance;

typedef struct FmMoments {
  uint64_t count;
  uint64_t rejected;
  double mean;
  double variance;
  double std_error;
  double mean_i1;
  double mean_i2;
  double var_i1;
  double var_i2;
  double cov_i1_i2;
} FmMoments;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fm_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into the library from the same thread.
 */
const char *fm_last_error_message(void);

/**
 * Creates a channel from `n` modes and two arrays of length `n`.
 *
 * # Safety
 * `h0` and `loss` must point to `n` readable doubles; `out` must be writable.
 */
enum FmStatus fm_channel_new(size_t n,
                             double alpha,
                             double gamma,
                             double rho0,
                             const double *h0,
                             const double *loss,
                             struct FmChannel **out);

/**
 * # Safety
 * `channel` must be null or a handle from [`fm_channel_new`] not yet freed.
 */
void fm_channel_free(struct FmChannel *channel);

/**
 * Switches the saddle solver to gamma continuation.
 *
 * # Safety
 * `channel` must be a live handle.
 */
enum FmStatus fm_channel_set_continuation(struct FmChannel *channel, bool enabled);

/**
 * Effective signal-to-noise ratio `rho = 4 alpha^2 pi^2 rho0`.
 *
 * # Safety
 * `channel` must be a live handle and `out` writable.
 */
enum FmStatus fm_channel_rho(const struct FmChannel *channel, double *out);

/**
 * Saddle-point mean of the mutual information in nats.
 *
 * # Safety
 * `channel` must be a live handle and `out` writable.
 */
enum FmStatus fm_channel_mean(const struct FmChannel *channel, double *out);

/**
 * Determinant-formula variance. Non-uniform loss falls back to a Monte Carlo
 * covariance with `mc_runs` realizations seeded by `mc_seed`.
 *
 * # Safety
 * `channel` must be a live handle and `out` writable.
 */
enum FmStatus fm_channel_variance(const struct FmChannel *channel,
                                  uint64_t mc_runs,
                                  uint64_t mc_seed,
                                  struct FmVariance *out);

/**
 * Mutual information of realization `index` of the run seeded with `seed`;
 * the same value [`fm_ensemble_run`] would draw. Singular draws return
 * `FM_STATUS_SINGULAR`.
 *
 * # Safety
 * `channel` must be a live handle and `out` writable.
 */
enum FmStatus fm_channel_sample(const struct FmChannel *channel,
                                uint64_t seed,
                                uint64_t index,
                                double *out);

/**
 * Runs `runs` realizations split into `chunks` pieces.
 *
 * # Safety
 * `channel` must be a live handle and `out` writable.
 */
enum FmStatus fm_ensemble_run(const struct FmChannel *channel,
                              uint64_t runs,
                              uint64_t seed,
                              size_t chunks,
                              struct FmEnsemble **out);

/**
 * # Safety
 * `ensemble` must be null or a handle from [`fm_ensemble_run`] not yet freed.
 */
void fm_ensemble_free(struct FmEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be a live handle and `out` writable.
 */
enum FmStatus fm_ensemble_moments(const struct FmEnsemble *ensemble, struct FmMoments *out);

/**
 * Number of accepted samples; 0 for a null handle.
 *
 * # Safety
 * `ensemble` must be null or a live handle.
 */
size_t fm_ensemble_len(const struct FmEnsemble *ensemble);

/**
 * Copies the accepted samples of `I`, in realization order, into `buf`.
 *
 * # Safety
 * `buf` must have room for `len` doubles.
 */
enum FmStatus fm_ensemble_samples(const struct FmEnsemble *ensemble, double *buf, size_t len);

/**
 * Empirical CDF at `x`.
 *
 * # Safety
 * `ensemble` must be a live handle and `out` writable.
 */
enum FmStatus fm_ensemble_cdf(const struct FmEnsemble *ensemble, double x, double *out);

/**
 * Kolmogorov-Smirnov distance to `N(mean, var)`; `var` must be positive.
 *
 * # Safety
 * `ensemble` must be a live handle and `out` writable.
 */
enum FmStatus fm_ensemble_ks(const struct FmEnsemble *ensemble,
                             double mean,
                             double var,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIBERMIMO_H */
