#ifndef WARP_H
#define WARP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Wavelet bases for `warp_denoise_options`.
 */
typedef enum warp_basis {
  WARP_BASIS_HAAR = 0,
  WARP_BASIS_D4 = 1,
} warp_basis;

/**
 * Slab families for `warp_denoise_options`.
 */
typedef enum warp_slab {
  WARP_SLAB_NORMAL = 0,
  WARP_SLAB_LAPLACE = 1,
  WARP_SLAB_QUASI_CAUCHY = 2,
} warp_slab;

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum warp_status {
  WARP_OK = 0,
  WARP_ERROR = 1,
  WARP_INVALID_INPUT = 2,
  WARP_NUMERIC_ERROR = 3,
  WARP_WEIGHT_COLLAPSE = 4,
} warp_status;

/**
 * Opaque observation handle: values on a dyadic grid.
 */
typedef struct warp_observation warp_observation;

/**
 * Opaque result handle holding the reconstruction and run summary.
 */
typedef struct warp_result warp_result;

/**
 * Denoising options. Start from `warp_denoise_options_default` and adjust.
 */
typedef struct warp_denoise_options {
  enum warp_slab slab;
  /**
   * Noise level; zero or negative requests the automatic estimate.
   */
  double sigma;
  /**
   * When nonzero the five fixed hyperparameters below are used instead of
   * the evidence search.
   */
  int32_t use_fixed_hyper;
  double alpha;
  double tau0;
  double beta;
  double c;
  double eta0;
  /**
   * Cycle-spin step radius per dimension; negative selects the default
   * (5 in 1D/2D, 2 in 3D and higher).
   */
  int64_t spin_radius;
  enum warp_basis basis;
  /**
   * Particle count for non-Haar bases.
   */
  uintptr_t particles;
  /**
   * Resampling threshold as a fraction of the particle count.
   */
  double ess_threshold;
  uint64_t seed;
  /**
   * Worker threads; zero uses all cores.
   */
  uintptr_t threads;
} warp_denoise_options;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *warp_last_error_message(void);

const char *warp_version(void);

/**
 * Create an observation from row-major values. `dims` lists side lengths
 * (each a power of two); `values` must hold their product.
 *
 * # Safety
 * `values` must point to `prod(dims)` doubles and `dims` to `ndims` entries.
 */
enum warp_status warp_observation_create(const double *values,
                                         const uint64_t *dims,
                                         uintptr_t ndims,
                                         struct warp_observation **out);

/**
 * # Safety
 * `obs` must come from `warp_observation_create` and not be freed twice.
 */
void warp_observation_free(struct warp_observation *obs);

struct warp_denoise_options warp_denoise_options_default(void);

/**
 * Reconstruct the posterior-mean signal with cycle spinning (Haar) or the
 * particle filter (other bases).
 *
 * # Safety
 * `obs` and `out` must be valid; the result must be freed with
 * `warp_result_free`.
 */
enum warp_status warp_denoise(const struct warp_observation *obs,
                              const struct warp_denoise_options *opts,
                              struct warp_result **out);

/**
 * Log marginal likelihood of the observation under the selected (or fixed)
 * hyperparameters.
 *
 * # Safety
 * `obs` and `out` must be valid pointers.
 */
enum warp_status warp_evidence(const struct warp_observation *obs,
                               const struct warp_denoise_options *opts,
                               double *out);

/**
 * Robust noise-scale estimate from finest-scale differences.
 *
 * # Safety
 * `obs` and `out` must be valid pointers.
 */
enum warp_status warp_estimate_sigma(const struct warp_observation *obs,
                                     double sigma_min,
                                     double *out);

/**
 * Base-2 logarithm of the number of canonical recursive dyadic partitions
 * of the grid.
 *
 * # Safety
 * `dims` must point to `ndims` entries and `out` must be valid.
 */
enum warp_status warp_count_trees_log2(const uint64_t *dims, uintptr_t ndims, double *out);

/**
 * # Safety
 * `result` must come from `warp_denoise`; `len` may be null.
 */
const double *warp_result_values(const struct warp_result *result, uintptr_t *len);

/**
 * # Safety
 * `result` must come from `warp_denoise`.
 */
double warp_result_log_evidence(const struct warp_result *result);

/**
 * # Safety
 * `result` must come from `warp_denoise`.
 */
double warp_result_sigma(const struct warp_result *result);

/**
 * # Safety
 * `result` must come from `warp_denoise` and not be freed twice.
 */
void warp_result_free(struct warp_result *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WARP_H */
