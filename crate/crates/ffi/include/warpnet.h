#ifndef WARPNET_H
#define WARPNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum WarpnetStatus {
  WARPNET_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  WARPNET_STATUS_NULL_POINTER = 1,
  /**
   * Bad arguments: shapes, unknown task, infeasible band.
   */
  WARPNET_STATUS_USAGE = 2,
  /**
   * Invalid configuration or parameters.
   */
  WARPNET_STATUS_SCHEMA = 3,
  /**
   * Unreadable or malformed files.
   */
  WARPNET_STATUS_DATA = 4,
  /**
   * Non-finite values.
   */
  WARPNET_STATUS_NUMERICAL = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  WARPNET_STATUS_PANIC = 6,
} WarpnetStatus;

/**
 * A trained (single- or multi-task) classifier loaded from a checkpoint.
 */
typedef struct WarpnetClassifier WarpnetClassifier;

/**
 * A trained distance regressor loaded from a checkpoint.
 */
typedef struct WarpnetDistanceModel WarpnetDistanceModel;

/**
 * Owned warping path.
 */
typedef struct WarpnetPath WarpnetPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *warpnet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *warpnet_version(void);

/**
 * Writes the `n × m` absolute-difference matrix (row-major) into `out`,
 * which must hold `n * m` values.
 */
enum WarpnetStatus warpnet_pairwise_matrix(const double *a,
                                           size_t n,
                                           const double *b,
                                           size_t m,
                                           double *out);

/**
 * DTW distance under a Sakoe-Chiba band of `band_radius` samples
 * (negative for unconstrained).
 */
enum WarpnetStatus warpnet_dtw(const double *a,
                               size_t n,
                               const double *b,
                               size_t m,
                               int64_t band_radius,
                               double *out);

/**
 * Soft-DTW value at temperature `gamma > 0`.
 */
enum WarpnetStatus warpnet_soft_dtw(const double *a,
                                    size_t n,
                                    const double *b,
                                    size_t m,
                                    double gamma,
                                    double *out);

/**
 * DTW distance plus an optimal path, returned as a new handle.
 */
enum WarpnetStatus warpnet_dtw_path(const double *a,
                                    size_t n,
                                    const double *b,
                                    size_t m,
                                    int64_t band_radius,
                                    double *distance,
                                    struct WarpnetPath **path);

/**
 * Number of cells on the path; 0 for a null handle.
 */
size_t warpnet_path_len(const struct WarpnetPath *path);

/**
 * Cell `index` of the path.
 */
enum WarpnetStatus warpnet_path_get(const struct WarpnetPath *path,
                                    size_t index,
                                    size_t *i,
                                    size_t *j);

void warpnet_path_free(struct WarpnetPath *path);

/**
 * Loads a distance-model checkpoint written by `warpnet run`.
 */
enum WarpnetStatus warpnet_distance_model_load(const char *checkpoint,
                                               struct WarpnetDistanceModel **out);

/**
 * Predicted distance between two series of equal length `len`.
 */
enum WarpnetStatus warpnet_distance_model_predict(const struct WarpnetDistanceModel *model,
                                                  const double *a,
                                                  const double *b,
                                                  size_t len,
                                                  double *out);

void warpnet_distance_model_free(struct WarpnetDistanceModel *model);

/**
 * Loads a classifier checkpoint written by `warpnet run`.
 */
enum WarpnetStatus warpnet_classifier_load(const char *checkpoint, struct WarpnetClassifier **out);

/**
 * Number of task heads; 0 for a null handle.
 */
size_t warpnet_classifier_num_tasks(const struct WarpnetClassifier *model);

/**
 * Index of the head named `task`.
 */
enum WarpnetStatus warpnet_classifier_task_index(const struct WarpnetClassifier *model,
                                                 const char *task,
                                                 size_t *out);

/**
 * Predicted class of one series under task head `task`.
 */
enum WarpnetStatus warpnet_classifier_predict(const struct WarpnetClassifier *model,
                                              size_t task,
                                              const double *series,
                                              size_t len,
                                              size_t *label);

void warpnet_classifier_free(struct WarpnetClassifier *model);

/**
 * Fractional ranks of `n` scores (rank 1 = highest, ties share the mean
 * position) written into `out`.
 */
enum WarpnetStatus warpnet_fractional_ranks(const double *scores, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WARPNET_H */
