#ifndef ZODMC_H
#define ZODMC_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZodmcPolicyKind {
  /**
   * `policy_value` conditional samples per score estimate.
   */
  ZODMC_POLICY_KIND_FIXED = 0,
  /**
   * `policy_value` proposals per score estimate.
   */
  ZODMC_POLICY_KIND_PROPOSAL_BUDGET = 1,
} ZodmcPolicyKind;

typedef enum ZodmcScheduleKind {
  ZODMC_SCHEDULE_KIND_CONSTANT = 0,
  ZODMC_SCHEDULE_KIND_LINEAR = 1,
  ZODMC_SCHEDULE_KIND_EXP_DECAY = 2,
} ZodmcScheduleKind;

typedef enum ZodmcStatus {
  ZODMC_STATUS_OK = 0,
  ZODMC_STATUS_NULL_POINTER = 1,
  ZODMC_STATUS_INVALID_ARGUMENT = 2,
  ZODMC_STATUS_CONFIG = 3,
  ZODMC_STATUS_STARVED = 4,
  ZODMC_STATUS_ABORTED = 5,
  ZODMC_STATUS_UNSUPPORTED = 6,
  ZODMC_STATUS_DOMINATION_VIOLATION = 7,
  ZODMC_STATUS_IO = 8,
  ZODMC_STATUS_PANIC = 9,
} ZodmcStatus;

/**
 * Opaque sample batch handle.
 */
typedef struct ZodmcBatch ZodmcBatch;

/**
 * Opaque target handle.
 */
typedef struct ZodmcTarget ZodmcTarget;

/**
 * Potential callback: `x` has `dim` entries; `user` is passed through. Must be
 * safe to call from several threads at once.
 */
typedef double (*ZodmcPotentialFn)(const double *x, size_t dim, void *user);

/**
 * Sampler settings. Fill with [`zodmc_run_config_default`] and adjust.
 */
typedef struct ZodmcRunConfig {
  enum ZodmcScheduleKind schedule_kind;
  double horizon;
  size_t steps;
  double delta;
  enum ZodmcPolicyKind policy_kind;
  uint64_t policy_value;
  /**
   * Number of output samples.
   */
  size_t batch_size;
  uint64_t seed;
  /**
   * Worker threads; 0 uses every core.
   */
  size_t workers;
  /**
   * Query cap; 0 means none.
   */
  uint64_t max_total_queries;
} ZodmcRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *zodmc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *zodmc_version(void);

/**
 * Gaussian mixture `-log sum_i w_i N(x; mu_i, Sigma_i)`. `means` is `k x dim`
 * and `covariances` is `k x dim x dim`, both row-major.
 *
 * # Safety
 * The arrays must hold `k`, `k * dim` and `k * dim * dim` doubles.
 */
enum ZodmcStatus zodmc_target_gmm(size_t dim,
                                  size_t k,
                                  const double *weights,
                                  const double *means,
                                  const double *covariances,
                                  struct ZodmcTarget **out);

/**
 * The four-mode 2D benchmark mixture. A positive `radius` rescales the means
 * so the `(0, 11)` mode sits at `(0, radius)`; pass 0 for the unscaled mixture.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ZodmcStatus zodmc_target_benchmark_2d(double radius, struct ZodmcTarget **out);

/**
 * Müller-Brown surface at inverse temperature `beta`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ZodmcStatus zodmc_target_mueller_brown(double beta,
                                            bool standard_form,
                                            struct ZodmcTarget **out);

/**
 * Target defined by a caller-supplied potential.
 *
 * # Safety
 * `f` must be callable concurrently from several threads with `user` for as
 * long as the target lives.
 */
enum ZodmcStatus zodmc_target_from_callback(size_t dim,
                                            ZodmcPotentialFn f,
                                            void *user,
                                            struct ZodmcTarget **out);

/**
 * Adds `height * floor(|x|)` on `inner < |x| < outer` to a target's potential.
 *
 * # Safety
 * `base` must be a live target handle and `out` a valid pointer.
 */
enum ZodmcStatus zodmc_target_annulus(const struct ZodmcTarget *base,
                                      double inner,
                                      double outer,
                                      double height,
                                      struct ZodmcTarget **out);

/**
 * Dimension of a target; 0 for a null handle.
 *
 * # Safety
 * `target` must be null or a live handle.
 */
size_t zodmc_target_dim(const struct ZodmcTarget *target);

/**
 * Evaluates the potential at `x`.
 *
 * # Safety
 * `x` must hold `dim` doubles and `out` must be valid.
 */
enum ZodmcStatus zodmc_target_potential(const struct ZodmcTarget *target,
                                        const double *x,
                                        size_t dim,
                                        double *out);

/**
 * # Safety
 * `target` must be null or a handle not yet freed.
 */
void zodmc_target_free(struct ZodmcTarget *target);

/**
 * Defaults: exponential-decay schedule with `T = 2`, `N = 25`, `delta = 5e-3`,
 * 2200 proposals per score estimate, 1000 samples.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ZodmcStatus zodmc_run_config_default(struct ZodmcRunConfig *out);

/**
 * Draws `config->batch_size` samples.
 *
 * # Safety
 * Pointers must be valid; `target` must be a live handle.
 */
enum ZodmcStatus zodmc_sample(const struct ZodmcTarget *target,
                              const struct ZodmcRunConfig *config,
                              struct ZodmcBatch **out);

/**
 * Unadjusted Langevin from the origin with finite-difference gradients.
 *
 * # Safety
 * Pointers must be valid; `target` must be a live handle.
 */
enum ZodmcStatus zodmc_ula(const struct ZodmcTarget *target,
                           double step,
                           size_t n_steps,
                           size_t n_chains,
                           uint64_t seed,
                           struct ZodmcBatch **out);

/**
 * Number of points; 0 for a null handle.
 *
 * # Safety
 * `batch` must be null or a live handle.
 */
size_t zodmc_batch_len(const struct ZodmcBatch *batch);

/**
 * Point dimension; 0 for a null handle.
 *
 * # Safety
 * `batch` must be null or a live handle.
 */
size_t zodmc_batch_dim(const struct ZodmcBatch *batch);

/**
 * Total potential evaluations the run made; 0 for a null handle.
 *
 * # Safety
 * `batch` must be null or a live handle.
 */
uint64_t zodmc_batch_queries(const struct ZodmcBatch *batch);

/**
 * Whether the run stopped early at its query cap; false for a null handle.
 *
 * # Safety
 * `batch` must be null or a live handle.
 */
bool zodmc_batch_truncated(const struct ZodmcBatch *batch);

/**
 * Copies the points row-major into `out`, which holds `out_len` doubles.
 *
 * # Safety
 * `out` must hold `out_len` doubles.
 */
enum ZodmcStatus zodmc_batch_points(const struct ZodmcBatch *batch, double *out, size_t out_len);

/**
 * Writes the points as CSV with header `x0,...`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
enum ZodmcStatus zodmc_batch_write_csv(const struct ZodmcBatch *batch, const char *path);

/**
 * # Safety
 * `batch` must be null or a handle not yet freed.
 */
void zodmc_batch_free(struct ZodmcBatch *batch);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZODMC_H */
