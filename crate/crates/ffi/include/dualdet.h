#ifndef DUALDET_H
#define DUALDET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Marks an unmatched row in [`dd_hungarian`] output.
 */
#define DD_UNMATCHED -1

/**
 * Result code of every call.
 */
typedef enum DdStatus {
  DD_STATUS_OK = 0,
  DD_STATUS_NULL_POINTER = 1,
  DD_STATUS_INVALID_ARGUMENT = 2,
  DD_STATUS_INVALID_GEOMETRY = 3,
  DD_STATUS_IO = 4,
  DD_STATUS_PARSE = 5,
  DD_STATUS_NUMERIC = 6,
  /**
   * Output buffer too small; the required length is still written.
   */
  DD_STATUS_BUFFER_TOO_SMALL = 7,
  DD_STATUS_INTERNAL = 8,
} DdStatus;

/**
 * Trained detector loaded from a checkpoint.
 */
typedef struct DdDetector DdDetector;

/**
 * Accumulates images, then computes dataset metrics.
 */
typedef struct DdEvaluator DdEvaluator;

/**
 * Box in normalized center form.
 */
typedef struct DdBox {
  double cx;
  double cy;
  double w;
  double h;
} DdBox;

typedef struct DdPrediction {
  struct DdBox bbox;
  double score;
} DdPrediction;

/**
 * Dataset metrics; `ar_large` is NaN when no large ground truth exists.
 */
typedef struct DdMetrics {
  double map;
  double ap50;
  double ap75;
  double ar_large;
  double p_80;
  double r_80;
  double f1_80;
  double p_90;
  double r_90;
  double f1_90;
} DdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *dd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dd_version(void);

/**
 * Intersection over union of two boxes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum DdStatus dd_iou(const struct DdBox *a, const struct DdBox *b, double *out);

/**
 * Minimum-cost assignment of a row-major `rows x cols` cost matrix.
 * Writes the assigned column of every row (or `DD_UNMATCHED`) to
 * `out_cols` (length `rows`) and the total cost to `out_total`.
 *
 * # Safety
 * `costs` must hold `rows * cols` values; `out_cols` must hold `rows`.
 */
enum DdStatus dd_hungarian(const double *costs,
                           uintptr_t rows,
                           uintptr_t cols,
                           int64_t *out_cols,
                           double *out_total);

/**
 * Greedy non-maximum suppression. Survivors, sorted by descending score,
 * go to `out` (capacity `cap`); their count goes to `out_len`.
 *
 * # Safety
 * `preds` must hold `n` entries, `out` must hold `cap`.
 */
enum DdStatus dd_nms(const struct DdPrediction *preds,
                     uintptr_t n,
                     double iou_threshold,
                     struct DdPrediction *out,
                     uintptr_t cap,
                     uintptr_t *out_len);

/**
 * Loads a detector checkpoint written by `dualdet train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
enum DdStatus dd_detector_load(const char *path, struct DdDetector **out);

/**
 * Upper bound on the detections [`dd_detector_predict`] can return.
 *
 * # Safety
 * `det` must be null or a live handle.
 */
uintptr_t dd_detector_max_detections(const struct DdDetector *det);

/**
 * Runs the detector on a row-major grayscale raster with values in [0, 1].
 *
 * # Safety
 * `pixels` must hold `width * height` values, `out` must hold `cap`.
 */
enum DdStatus dd_detector_predict(const struct DdDetector *det,
                                  const double *pixels,
                                  uintptr_t width,
                                  uintptr_t height,
                                  struct DdPrediction *out,
                                  uintptr_t cap,
                                  uintptr_t *out_len);

/**
 * # Safety
 * `det` must be null or a handle from [`dd_detector_load`], freed once.
 */
void dd_detector_free(struct DdDetector *det);

/**
 * New evaluator with the default COCO-style settings.
 *
 * # Safety
 * `out` must be valid.
 */
enum DdStatus dd_evaluator_new(struct DdEvaluator **out);

/**
 * Adds one image; ids must be unique.
 *
 * # Safety
 * `gts` must hold `n_gts` boxes and `preds` `n_preds` predictions.
 */
enum DdStatus dd_evaluator_add_image(struct DdEvaluator *ev,
                                     uint64_t image_id,
                                     const struct DdBox *gts,
                                     uintptr_t n_gts,
                                     const struct DdPrediction *preds,
                                     uintptr_t n_preds);

/**
 * Metrics over all added images.
 *
 * # Safety
 * `ev` and `out` must be valid.
 */
enum DdStatus dd_evaluator_compute(const struct DdEvaluator *ev, struct DdMetrics *out);

/**
 * # Safety
 * `ev` must be null or a handle from [`dd_evaluator_new`], freed once.
 */
void dd_evaluator_free(struct DdEvaluator *ev);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUALDET_H */
