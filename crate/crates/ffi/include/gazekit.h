#ifndef GAZEKIT_H
#define GAZEKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GkStatus {
  GK_STATUS_OK = 0,
  GK_STATUS_NULL_POINTER = 1,
  GK_STATUS_INVALID_ARGUMENT = 2,
  GK_STATUS_IO = 3,
  GK_STATUS_FORMAT = 4,
  GK_STATUS_NUMERICAL = 5,
  GK_STATUS_PANIC = 6,
} GkStatus;

typedef enum GkPredictMode {
  /**
   * Average of all fold models.
   */
  GK_PREDICT_MODE_MIXTURE = 0,
  /**
   * The fold model that held this image out.
   */
  GK_PREDICT_MODE_LEAVE_OUT = 1,
  /**
   * One fold model, chosen by index.
   */
  GK_PREDICT_MODE_SINGLE = 2,
  GK_PREDICT_MODE_PRETRAINED = 3,
} GkPredictMode;

/**
 * A loaded model bundle.
 */
typedef struct GkBundle GkBundle;

/**
 * A predicted fixation density.
 */
typedef struct GkDensity GkDensity;

/**
 * A loaded feature stack.
 */
typedef struct GkFeatureStack GkFeatureStack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. The pointer stays valid
 * until the next gazekit call on the same thread.
 */
const char *gk_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gk_version(void);

/**
 * Loads an FMAP file. The image id is the file stem.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GkStatus gk_feature_stack_load(const char *path, struct GkFeatureStack **out);

/**
 * # Safety
 * `stack` must come from [`gk_feature_stack_load`]; the out pointers must be
 * writable.
 */
enum GkStatus gk_feature_stack_dims(const struct GkFeatureStack *stack,
                                    size_t *channels,
                                    size_t *height,
                                    size_t *width);

/**
 * # Safety
 * `stack` must be null or come from [`gk_feature_stack_load`], freed once.
 */
void gk_feature_stack_free(struct GkFeatureStack *stack);

/**
 * Loads a model bundle directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum GkStatus gk_bundle_load(const char *dir, struct GkBundle **out);

/**
 * # Safety
 * `bundle` must come from [`gk_bundle_load`]; `folds` must be writable.
 */
enum GkStatus gk_bundle_num_folds(const struct GkBundle *bundle, size_t *folds);

/**
 * # Safety
 * `bundle` must be null or come from [`gk_bundle_load`], freed once.
 */
void gk_bundle_free(struct GkBundle *bundle);

/**
 * Predicts the fixation density for one feature stack. `fold` is only read
 * in `GK_PREDICT_MODE_SINGLE` mode.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum GkStatus gk_predict(const struct GkBundle *bundle,
                         const struct GkFeatureStack *stack,
                         enum GkPredictMode mode,
                         size_t fold,
                         bool with_center_bias,
                         struct GkDensity **out);

/**
 * # Safety
 * `density` must be live; the out pointers must be writable.
 */
enum GkStatus gk_density_dims(const struct GkDensity *density, size_t *height, size_t *width);

/**
 * Copies the density, row-major, into `buf` of exactly `height * width`
 * doubles.
 *
 * # Safety
 * `density` must be live; `buf` must hold `len` doubles.
 */
enum GkStatus gk_density_copy(const struct GkDensity *density, double *buf, size_t len);

/**
 * Writes the 256-level equal-mass quantization of the log density,
 * row-major, into `buf` of exactly `height * width` bytes.
 *
 * # Safety
 * `density` must be live; `buf` must hold `len` bytes.
 */
enum GkStatus gk_density_quantize(const struct GkDensity *density, uint8_t *buf, size_t len);

/**
 * # Safety
 * `density` must be null or come from [`gk_predict`], freed once.
 */
void gk_density_free(struct GkDensity *density);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAZEKIT_H */
