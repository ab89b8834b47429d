#ifndef BROWN_MDE_H
#define BROWN_MDE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bits of the violation mask written by [`bm_spec_validate`].
 */
#define BM_VIOLATION_VARIANCE_ABOVE_BOUND 1

#define BM_VIOLATION_VARIANCE_BELOW_BOUND (1 << 1)

#define BM_VIOLATION_DEFORMATION_ABOVE_BOUND (1 << 2)

#define BM_VIOLATION_ZERO_DIAGONAL_BLOCK (1 << 3)

#define BM_VIOLATION_NOT_PRIMITIVE (1 << 4)

#define BM_VIOLATION_HOLDER_EXPONENT (1 << 5)

/**
 * Status codes. `BM_OK` is zero; the rest mirror the library error kinds.
 */
typedef enum BmStatus {
  BM_OK = 0,
  BM_ERR_NULL_POINTER = 1,
  BM_ERR_INVALID_SPEC = 2,
  BM_ERR_BLOCK_UNRESOLVED = 3,
  BM_ERR_DOMAIN = 4,
  BM_ERR_NON_CONVERGENCE = 5,
  BM_ERR_NUMERICAL_FAILURE = 6,
  BM_ERR_CONFIG = 7,
  BM_ERR_IO = 8,
  BM_ERR_PANIC = 9,
} BmStatus;

/**
 * Opaque discretized model.
 */
typedef struct BmModel BmModel;

/**
 * Opaque profile specification.
 */
typedef struct BmSpec BmSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *bm_last_error(void);

/**
 * Parses a profile from TOML text: either the profile keys alone
 * (`breakpoints`, `variance`, `deformation_re`, `deformation_im`,
 * optional `c_bound`, `holder_theta`) or a full run configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BmStatus bm_spec_from_toml(const char *toml, struct BmSpec **out);

/**
 * Builds a profile with `k` blocks from `k + 1` breakpoints, a row-major
 * `k * k` variance matrix and `k` deformation values.
 *
 * # Safety
 * Array pointers must hold the stated number of elements.
 */
enum BmStatus bm_spec_new(size_t k,
                          const double *breakpoints,
                          const double *variance,
                          const double *deformation_re,
                          const double *deformation_im,
                          double c_bound,
                          double holder_theta,
                          struct BmSpec **out);

/**
 * # Safety
 * `spec` must come from this library and not be freed twice.
 */
void bm_spec_free(struct BmSpec *spec);

/**
 * Checks the model assumptions. Writes the number of violations and a
 * mask of `BM_VIOLATION_*` bits; either output may be null.
 *
 * # Safety
 * `spec` must be a valid handle.
 */
enum BmStatus bm_spec_validate(const struct BmSpec *spec, size_t *count, uint32_t *mask);

/**
 * # Safety
 * `spec` must be a valid handle and `out` a valid pointer.
 */
enum BmStatus bm_model_discretize(const struct BmSpec *spec, size_t n, struct BmModel **out);

/**
 * Dimension `n` of a model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be a valid handle or null.
 */
size_t bm_model_n(const struct BmModel *model);

/**
 * # Safety
 * `model` must come from this library and not be freed twice.
 */
void bm_model_free(struct BmModel *model);

/**
 * Solves the vector Dyson equation at `(zeta, eta)`. `v1` and `v2` must
 * hold `len == n` doubles; `residual` may be null.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum BmStatus bm_solve_vde(const struct BmModel *model,
                           double zeta_re,
                           double zeta_im,
                           double eta,
                           double *v1,
                           double *v2,
                           size_t len,
                           double *residual);

/**
 * Log-potential `L(zeta)`; `error_estimate` may be null.
 *
 * # Safety
 * `model` must be a valid handle and `value` a valid pointer.
 */
enum BmStatus bm_log_potential(const struct BmModel *model,
                               double zeta_re,
                               double zeta_im,
                               double *value,
                               double *error_estimate);

/**
 * Density of the limiting singular value measure at `tau`.
 *
 * # Safety
 * `model` must be a valid handle and `out` a valid pointer.
 */
enum BmStatus bm_rho_density(const struct BmModel *model,
                             double zeta_re,
                             double zeta_im,
                             double tau,
                             double *out);

/**
 * Distance from 0 to the support of the singular value measure at `zeta`.
 *
 * # Safety
 * `model` must be a valid handle and `out` a valid pointer.
 */
enum BmStatus bm_dist_zero_support(const struct BmModel *model,
                                   double zeta_re,
                                   double zeta_im,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BROWN_MDE_H */
