#ifndef ALLOY_DESIGN_H
#define ALLOY_DESIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of features per alloy.
 */
#define AD_N_FEATURES 7

typedef enum AdStatus {
  AD_STATUS_OK = 0,
  AD_STATUS_NULL_POINTER = 1,
  AD_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File missing, unreadable or malformed.
   */
  AD_STATUS_IO = 3,
  /**
   * The model has no input gradient (tree ensembles).
   */
  AD_STATUS_NOT_DIFFERENTIABLE = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  AD_STATUS_INTERNAL = 5,
} AdStatus;

/**
 * A trained surrogate loaded from its JSON file.
 */
typedef struct AdModel AdModel;

/**
 * Element data and mixing enthalpies.
 */
typedef struct AdRegistry AdRegistry;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *ad_last_error_message(void);

/**
 * Built-in 39-element registry. Never NULL.
 */
struct AdRegistry *ad_registry_default(void);

/**
 * Loads a registry from an element CSV and an enthalpy matrix CSV.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum AdStatus ad_registry_load(const char *elements_path,
                               const char *enthalpy_path,
                               struct AdRegistry **out);

/**
 * Number of elements; 0 for NULL.
 *
 * # Safety
 * `reg` is NULL or a live registry handle.
 */
size_t ad_registry_len(const struct AdRegistry *reg);

/**
 * # Safety
 * `reg` is NULL or a handle from this library that has not been freed.
 */
void ad_registry_free(struct AdRegistry *reg);

/**
 * Seven features of a composition in percent summing to 100.
 *
 * # Safety
 * `x` holds `n` doubles; `out` has room for `AD_N_FEATURES`.
 */
enum AdStatus ad_features(const struct AdRegistry *reg, const double *x, size_t n, double *out);

/**
 * Feature Jacobian, row-major `n x AD_N_FEATURES`: entry `(i, j)` is the
 * derivative of feature `j` with respect to component `i`.
 *
 * # Safety
 * `x` holds `n` doubles; `out` has room for `n * AD_N_FEATURES`.
 */
enum AdStatus ad_jacobian(const struct AdRegistry *reg, const double *x, size_t n, double *out);

/**
 * Material cost per unit mass and, when `grad` is non-NULL, its gradient.
 *
 * # Safety
 * `x` holds `n` doubles; `cost` is writable; `grad` is NULL or has room for `n`.
 */
enum AdStatus ad_cost(const struct AdRegistry *reg,
                      const double *x,
                      size_t n,
                      double *cost,
                      double *grad);

/**
 * Euclidean projection of `v` onto `{x >= 0, sum(x) = total}`.
 *
 * # Safety
 * `v` and `out` hold `n` doubles; they may alias.
 */
enum AdStatus ad_project_simplex(const double *v, size_t n, double total, double *out);

/**
 * Loads a model saved by the command-line tool.
 *
 * # Safety
 * `model_path` is a NUL-terminated string; `out` is writable.
 */
enum AdStatus ad_model_load(const char *model_path, struct AdModel **out);

/**
 * Predicted temperature, °C, for a feature vector.
 *
 * # Safety
 * `features` holds `AD_N_FEATURES` doubles; `out` is writable.
 */
enum AdStatus ad_model_predict(const struct AdModel *model, const double *features, double *out);

/**
 * Gradient of the prediction with respect to the features.
 *
 * # Safety
 * `features` holds `AD_N_FEATURES` doubles; `out` has room for as many.
 */
enum AdStatus ad_model_gradient(const struct AdModel *model, const double *features, double *out);

/**
 * 1 when the model has an input gradient, 0 otherwise or for NULL.
 *
 * # Safety
 * `model` is NULL or a live model handle.
 */
int32_t ad_model_is_differentiable(const struct AdModel *model);

/**
 * # Safety
 * `model` is NULL or a handle from this library that has not been freed.
 */
void ad_model_free(struct AdModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALLOY_DESIGN_H */
