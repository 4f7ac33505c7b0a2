#ifndef INSOLE_VGRF_H
#define INSOLE_VGRF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Samples per gait-cycle window.
 */
#define IVG_WINDOW_LEN 200

typedef enum IvgStatus {
  IVG_STATUS_OK = 0,
  IVG_STATUS_NULL_POINTER = 1,
  IVG_STATUS_INVALID_ARGUMENT = 2,
  IVG_STATUS_IO = 3,
  IVG_STATUS_CORRUPT_FILE = 4,
  IVG_STATUS_VERSION_MISMATCH = 5,
  /**
   * input rejected by the pipeline (too short, constant, no stance, ...)
   */
  IVG_STATUS_INVALID_DATA = 6,
  IVG_STATUS_MANIFEST_MISMATCH = 7,
  IVG_STATUS_PANIC = 8,
} IvgStatus;

/**
 * Trained regressor loaded from a model file.
 */
typedef struct IvgModel IvgModel;

/**
 * Gait-cycle windows loaded from a window file.
 */
typedef struct IvgWindowSet IvgWindowSet;

typedef struct IvgCops {
  /**
   * mm
   */
  double x;
  double y;
  /**
   * 0 means swing; x and y then hold the layout centroid
   */
  size_t pressed_count;
} IvgCops;

typedef struct IvgPeaks {
  /**
   * BW
   */
  double wap_value;
  /**
   * fraction of the cycle
   */
  double wap_time;
  double pop_value;
  double pop_time;
  size_t stance_start;
  /**
   * inclusive
   */
  size_t stance_end;
} IvgPeaks;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call into this library from the same thread.
 */
const char *ivg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ivg_version(void);

/**
 * # Safety
 * `reference` and `estimate` must point to `n` readable doubles; `result`
 * must be writable.
 */
enum IvgStatus ivg_rmse(const double *reference, const double *estimate, size_t n, double *result);

/**
 * RMSE over the reference range, percent.
 *
 * # Safety
 * As [`ivg_rmse`].
 */
enum IvgStatus ivg_nrmse(const double *reference, const double *estimate, size_t n, double *result);

/**
 * # Safety
 * As [`ivg_rmse`].
 */
enum IvgStatus ivg_pearson_r(const double *reference,
                             const double *estimate,
                             size_t n,
                             double *result);

/**
 * Swing-phase mean plus three sample standard deviations.
 *
 * # Safety
 * `swing_values` must point to `n` readable doubles; `result` must be
 * writable.
 */
enum IvgStatus ivg_adaptive_threshold(const double *swing_values, size_t n, double *result);

/**
 * CoPS of one pressure frame: centroid of the sensors at or above their
 * threshold.
 *
 * # Safety
 * `pressures` and `thresholds` must hold `n_sensors` doubles, `coords`
 * `2 * n_sensors` doubles as (x, y) pairs; `result` must be writable.
 */
enum IvgStatus ivg_cops(const double *pressures,
                        const double *thresholds,
                        const double *coords,
                        size_t n_sensors,
                        struct IvgCops *result);

/**
 * 4th-order zero-phase low-pass at 6 Hz on a 100 Hz series; `output` may
 * alias `series`.
 *
 * # Safety
 * `series` must hold `n` doubles and `output` must have room for `n`.
 */
enum IvgStatus ivg_smooth(const double *series, size_t n, double *output);

/**
 * Stance detection and WAP/POP extraction on one cycle of `n` samples.
 *
 * # Safety
 * `vgrf` must hold `n` doubles; `result` must be writable.
 */
enum IvgStatus ivg_extract_peaks(const double *vgrf, size_t n, struct IvgPeaks *result);

/**
 * Loads a model file. On success `*model` owns a handle to release with
 * [`ivg_model_free`].
 *
 * # Safety
 * `file` must be a NUL-terminated path; `model` must be writable.
 */
enum IvgStatus ivg_model_load(const char *file, struct IvgModel **model);

/**
 * # Safety
 * `model` must come from [`ivg_model_load`] and not be used afterwards.
 * NULL is ignored.
 */
void ivg_model_free(struct IvgModel *model);

/**
 * Number of input channels the model expects.
 *
 * # Safety
 * `model` must be a live handle or NULL (returns 0).
 */
size_t ivg_model_channel_count(const struct IvgModel *model);

/**
 * Tagged channel manifest, e.g. `T1:L.ax,...`, copied into `buffer`
 * with a terminating NUL. `*needed` receives the full size including the
 * NUL; when `capacity` is too small nothing is copied and
 * `InvalidArgument` is returned.
 *
 * # Safety
 * `model` must be a live handle, `buffer` writable for `capacity` bytes
 * (may be NULL when `capacity` is 0), `needed` writable.
 */
enum IvgStatus ivg_model_manifest(const struct IvgModel *model,
                                  char *buffer,
                                  size_t capacity,
                                  size_t *needed);

/**
 * Model family: 1 MLP, 2 random forest, 3 BiLSTM, 0 for NULL.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
uint8_t ivg_model_kind(const struct IvgModel *model);

/**
 * vGRF estimate (BW) for one window. `x` holds `channels * IVG_WINDOW_LEN`
 * channel-major values in the order of [`ivg_model_manifest`]; samples
 * from `valid_length` on are padding. With `smooth` set, pointwise models
 * get the zero-phase low-pass over the valid part, as in evaluation.
 * `output` receives `IVG_WINDOW_LEN` values.
 *
 * # Safety
 * `model` must be a live handle, `x` readable and `output` writable for
 * the sizes above.
 */
enum IvgStatus ivg_model_predict(const struct IvgModel *model,
                                 const double *x,
                                 size_t channels,
                                 size_t valid_length,
                                 uint8_t foot_side,
                                 bool smooth,
                                 double *output);

/**
 * Loads a window file. Release with [`ivg_windows_free`].
 *
 * # Safety
 * `file` must be a NUL-terminated path; `windows` must be writable.
 */
enum IvgStatus ivg_windows_load(const char *file, struct IvgWindowSet **windows);

/**
 * # Safety
 * `windows` must come from [`ivg_windows_load`] and not be used
 * afterwards. NULL is ignored.
 */
void ivg_windows_free(struct IvgWindowSet *windows);

/**
 * # Safety
 * `windows` must be a live handle or NULL (returns 0).
 */
size_t ivg_windows_count(const struct IvgWindowSet *windows);

/**
 * # Safety
 * `windows` must be a live handle or NULL (returns 0).
 */
size_t ivg_windows_channel_count(const struct IvgWindowSet *windows);

/**
 * Copies window `index`: features into `x` (channels * IVG_WINDOW_LEN),
 * reference vGRF into `y` (IVG_WINDOW_LEN). `x` or `y` may be NULL to
 * skip them.
 *
 * # Safety
 * `windows` must be a live handle; non-NULL buffers must have the sizes
 * above; `valid_length` and `foot_side` must be writable.
 */
enum IvgStatus ivg_windows_get(const struct IvgWindowSet *windows,
                               size_t index,
                               double *x,
                               double *y,
                               size_t *valid_length,
                               uint8_t *foot_side);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INSOLE_VGRF_H */
