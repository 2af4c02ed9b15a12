#ifndef MHDETR_H
#define MHDETR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes; 2–4 equal the command-line exit codes.
 */
typedef enum MhStatus {
  MH_STATUS_OK = 0,
  /*
   Null pointer or a path that is not UTF-8.
   */
  MH_STATUS_INVALID_ARGUMENT = 1,
  MH_STATUS_CONFIG_ERROR = 2,
  MH_STATUS_DATA_ERROR = 3,
  MH_STATUS_NUMERIC_ERROR = 4,
  /*
   A Rust panic was caught at the boundary.
   */
  MH_STATUS_INTERNAL_ERROR = 5,
} MhStatus;

typedef struct MhModel MhModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length plus one.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t mh_last_error_message(char *buf, size_t len);

/*
 Loads a checkpoint file into a new model handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MhStatus mh_model_load(const char *path, struct MhModel **out);

/*
 Releases a handle from `mh_model_load`; null is ignored.

 # Safety
 `model` must come from `mh_model_load` and not be used afterwards.
 */
void mh_model_free(struct MhModel *model);

/*
 Trainable scalar count, 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
uint64_t mh_model_num_params(const struct MhModel *model);

/*
 Moment queries per prediction, 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t mh_model_num_queries(const struct MhModel *model);

/*
 Expected video and text feature widths.

 # Safety
 `model` must be a live handle; the out pointers must be valid.
 */
enum MhStatus mh_model_feature_dims(const struct MhModel *model,
                                    size_t *video_dim,
                                    size_t *text_dim);

/*
 Runs inference on one sample.

 Inputs are row-major `video_len × video_dim` and `text_len × text_dim`
 float arrays. Outputs: `spans` holds `num_queries × 2` normalized
 `(start, end)` pairs, `fg_prob` `num_queries` foreground probabilities,
 `saliency` `video_len` clip scores in `[0, 1]`.

 # Safety
 Every pointer must be valid for the sizes above.
 */
enum MhStatus mh_model_predict(const struct MhModel *model,
                               const float *video,
                               size_t video_len,
                               const float *text,
                               size_t text_len,
                               double *spans,
                               double *fg_prob,
                               double *saliency);

/*
 Temporal IoU of two intervals; inverted intervals are empty.
 */
double mh_span_iou(double s1, double e1, double s2, double e2);

/*
 Generalized temporal IoU of two intervals.
 */
double mh_span_giou(double s1, double e1, double s2, double e2);

/*
 Minimum-cost assignment of `rows ≤ cols`; `cost` is row-major and
 `assignment[r]` receives the column of row `r`.

 # Safety
 `cost` must hold `rows * cols` values and `assignment` `rows` slots.
 */
enum MhStatus mh_hungarian(const double *cost, size_t rows, size_t cols, size_t *assignment);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MHDETR_H */
