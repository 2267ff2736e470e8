#ifndef ONCODE_H
#define ONCODE_H

#pragma once

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OncodeCategory {
  ONCODE_CATEGORY_CR = 0,
  ONCODE_CATEGORY_PR = 1,
  ONCODE_CATEGORY_SD = 2,
  ONCODE_CATEGORY_PD = 3,
} OncodeCategory;

typedef enum OncodeStatus {
  ONCODE_STATUS_OK = 0,
  ONCODE_STATUS_NULL_POINTER = 1,
  ONCODE_STATUS_INVALID_ARGUMENT = 2,
  ONCODE_STATUS_DATA = 3,
  ONCODE_STATUS_NUMERICAL = 4,
  ONCODE_STATUS_CHECKPOINT = 5,
  ONCODE_STATUS_IO = 6,
  ONCODE_STATUS_PANIC = 7,
} OncodeStatus;

/**
 * A loaded or generated cohort.
 */
typedef struct OncodeDataset OncodeDataset;

/**
 * A trained model restored from a checkpoint.
 */
typedef struct OncodeModel OncodeModel;

typedef struct OncodeTgiFit {
  double k_g;
  double k_d;
  double lambda;
  /**
   * Sum of squared log-volume residuals.
   */
  double rss;
  bool converged;
} OncodeTgiFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next call
 * that fails on the same thread.
 */
const char *oncode_last_error(void);

void oncode_clear_error(void);

/**
 * Static, NUL-terminated library version.
 */
const char *oncode_version(void);

/**
 * Closed-form TGI volumes on `grid` (days, starting at 0) into `out_volumes[n]`.
 *
 * # Safety
 * `grid` and `out_volumes` must point to `n` doubles.
 */
enum OncodeStatus oncode_tgi_simulate(double k_g,
                                      double k_d,
                                      double lambda,
                                      double v0,
                                      const double *grid,
                                      size_t n,
                                      double *out_volumes);

/**
 * Fits TGI parameters to one series.
 *
 * # Safety
 * `times` and `volumes` must point to `n` doubles.
 */
enum OncodeStatus oncode_tgi_fit(const double *times,
                                 const double *volumes,
                                 size_t n,
                                 struct OncodeTgiFit *out_fit);

/**
 * Minimum percentage volume change between day 10 and day 64.
 *
 * # Safety
 * `times` and `volumes` must point to `n` doubles.
 */
enum OncodeStatus oncode_best_response(const double *times,
                                       const double *volumes,
                                       size_t n,
                                       double *out_best_response);

/**
 * mRECIST category of a best response.
 *
 * # Safety
 * `out_category` must be valid for writes.
 */
enum OncodeStatus oncode_categorize(double best_response, enum OncodeCategory *out_category);

/**
 * Loads the six standard cohort files from `dir`.
 *
 * # Safety
 * `dir` and `tissue` must be NUL-terminated strings; `out_dataset` valid for writes.
 */
enum OncodeStatus oncode_dataset_load(const char *dir,
                                      const char *tissue,
                                      struct OncodeDataset **out_dataset);

/**
 * Generates a synthetic cohort with default settings apart from the arguments.
 *
 * # Safety
 * `out_dataset` must be valid for writes.
 */
enum OncodeStatus oncode_cohort_generate(uint64_t seed,
                                         double signal,
                                         double noise,
                                         size_t experiments,
                                         struct OncodeDataset **out_dataset);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards. Null is ignored.
 */
void oncode_dataset_free(struct OncodeDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle; `out_count` valid for writes.
 */
enum OncodeStatus oncode_dataset_experiment_count(const struct OncodeDataset *dataset,
                                                  size_t *out_count);

/**
 * Number of measurements of experiment `index`.
 *
 * # Safety
 * `dataset` must be a live handle; `out_len` valid for writes.
 */
enum OncodeStatus oncode_dataset_series_len(const struct OncodeDataset *dataset,
                                            size_t index,
                                            size_t *out_len);

/**
 * Copies the measurement days and volumes of experiment `index`; both buffers
 * must hold `oncode_dataset_series_len` doubles, passed as `capacity`.
 *
 * # Safety
 * `dataset` must be a live handle; the buffers must hold `capacity` doubles.
 */
enum OncodeStatus oncode_dataset_series(const struct OncodeDataset *dataset,
                                        size_t index,
                                        double *out_times,
                                        double *out_volumes,
                                        size_t capacity);

/**
 * Restores a checkpoint directory against the vocabulary of `dataset`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string, `dataset` a live handle, `out_model` valid for writes.
 */
enum OncodeStatus oncode_model_load(const char *dir,
                                    const struct OncodeDataset *dataset,
                                    struct OncodeModel **out_model);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is ignored.
 */
void oncode_model_free(struct OncodeModel *model);

/**
 * Whether the model is a responder classifier rather than a dynamics model.
 *
 * # Safety
 * `model` must be a live handle; `out_is_classifier` valid for writes.
 */
enum OncodeStatus oncode_model_is_classifier(const struct OncodeModel *model,
                                             bool *out_is_classifier);

/**
 * Predicted volumes (mm³) of experiment `index` on `grid`, conditioned on the
 * measurements up to day `window`; a negative or NaN `window` uses the whole series.
 *
 * # Safety
 * Handles must be live; `grid` and `out_volumes` must point to `n` doubles.
 */
enum OncodeStatus oncode_model_predict(const struct OncodeModel *model,
                                       const struct OncodeDataset *dataset,
                                       size_t index,
                                       double window,
                                       const double *grid,
                                       size_t n,
                                       double *out_volumes);

/**
 * Responder probability of experiment `index` from a classifier model.
 *
 * # Safety
 * Handles must be live; `out_probability` valid for writes.
 */
enum OncodeStatus oncode_model_classify(const struct OncodeModel *model,
                                        const struct OncodeDataset *dataset,
                                        size_t index,
                                        double *out_probability);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONCODE_H */
