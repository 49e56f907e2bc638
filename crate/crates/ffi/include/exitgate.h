#ifndef EXITGATE_H
#define EXITGATE_H

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum ExitgateStatus {
  ExitgateStatus_Ok = 0,
  ExitgateStatus_NullPointer = 1,
  ExitgateStatus_InvalidArgument = 2,
  ExitgateStatus_ShapeMismatch = 3,
  ExitgateStatus_IoError = 4,
  ExitgateStatus_ParseError = 5,
  ExitgateStatus_TrainingError = 6,
  ExitgateStatus_InternalError = 7,
} ExitgateStatus;

/**
 * Opaque handle to a loaded dataset.
 */
typedef struct ExitgateDataset ExitgateDataset;

/**
 * Opaque handle to a trained multi-exit model.
 */
typedef struct ExitgateModel ExitgateModel;

/**
 * Result of gated inference on one sample.
 */
typedef struct ExitgateInference {
  /**
   * 1-based layer at which the walk terminated.
   */
  uint32_t exit_layer;
  /**
   * Predicted class when covered, -1 when deferred to the expert.
   */
  int32_t label;
  /**
   * 1 when the sample was deferred, 0 when the model predicted.
   */
  uint8_t deferred;
  /**
   * Exit-head confidence at the terminal layer.
   */
  double confidence;
  /**
   * Deferral-head hardness at the terminal layer.
   */
  double hardness;
} ExitgateInference;

/**
 * Selective metrics over a dataset.
 */
typedef struct ExitgateMetrics {
  uint64_t total;
  uint64_t covered;
  uint64_t deferred;
  double coverage;
  /**
   * Error rate among covered samples; meaningful only when `risk_defined`.
   */
  double risk;
  uint8_t risk_defined;
  double speedup;
} ExitgateMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never freed by the caller.
 */
const char *exitgate_version(void);

/**
 * Message for the most recent failure on this thread, or null when the last
 * call succeeded. Valid until the next failing call on the same thread.
 */
const char *exitgate_last_error_message(void);

/**
 * Loads a model checkpoint. On success stores a heap-allocated handle in
 * `out`; release it with `exitgate_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ExitgateStatus exitgate_model_load(const char *path, struct ExitgateModel **out);

/**
 * Saves a model checkpoint.
 *
 * # Safety
 * `model` must be a live handle from `exitgate_model_load`; `path` must be a
 * NUL-terminated string.
 */
enum ExitgateStatus exitgate_model_save(const struct ExitgateModel *model, const char *path);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must have come from `exitgate_model_load` and not be freed twice.
 */
void exitgate_model_free(struct ExitgateModel *model);

/**
 * Number of backbone layers; 0 on a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t exitgate_model_layers(const struct ExitgateModel *model);

/**
 * Number of classes; 0 on a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t exitgate_model_classes(const struct ExitgateModel *model);

/**
 * Expected feature width; 0 on a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uint32_t exitgate_model_input_dim(const struct ExitgateModel *model);

/**
 * Loads a `f1..fd,label` CSV dataset.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ExitgateStatus exitgate_dataset_load_csv(const char *path, struct ExitgateDataset **out);

/**
 * Releases a dataset handle; null is ignored.
 *
 * # Safety
 * `dataset` must have come from `exitgate_dataset_load_csv` and not be freed
 * twice.
 */
void exitgate_dataset_free(struct ExitgateDataset *dataset);

/**
 * Number of samples; 0 on a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
uint64_t exitgate_dataset_len(const struct ExitgateDataset *dataset);

/**
 * Feature width; 0 on a null handle.
 *
 * # Safety
 * `dataset` must be a live handle or null.
 */
uint32_t exitgate_dataset_dims(const struct ExitgateDataset *dataset);

/**
 * Runs the gated walk on one feature vector. A deferred sample reports
 * `deferred = 1` and `label = -1`; resolving it against an expert is the
 * caller's concern.
 *
 * # Safety
 * `model` must be a live handle; `features` must point to `features_len`
 * readable doubles; `out` must be a valid pointer.
 */
enum ExitgateStatus exitgate_infer_sample(const struct ExitgateModel *model,
                                          const double *features,
                                          size_t features_len,
                                          double alpha,
                                          double beta,
                                          struct ExitgateInference *out);

/**
 * Evaluates the gated protocol over a dataset, treating the dataset's labels
 * as the expert.
 *
 * # Safety
 * `model` and `dataset` must be live handles; `out` must be a valid pointer.
 */
enum ExitgateStatus exitgate_evaluate(const struct ExitgateModel *model,
                                      const struct ExitgateDataset *dataset,
                                      double alpha,
                                      double beta,
                                      struct ExitgateMetrics *out);

/**
 * Fills `counts` (length `counts_len`, which must equal the layer count)
 * with per-layer termination counts, exits and deferrals combined.
 *
 * # Safety
 * `model` and `dataset` must be live handles; `counts` must point to
 * `counts_len` writable u64 slots.
 */
enum ExitgateStatus exitgate_exit_histogram(const struct ExitgateModel *model,
                                            const struct ExitgateDataset *dataset,
                                            double alpha,
                                            double beta,
                                            uint64_t *counts,
                                            size_t counts_len);

/**
 * Maximal admissible deferral error rate for one layer with exit error `q`
 * and risk target `gamma`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ExitgateStatus exitgate_lemma_bound(double q, double gamma, double *out);

/**
 * Worst-layer form of the bound, evaluated at `q_max`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ExitgateStatus exitgate_theorem_bound(double q_max, double gamma, double *out);

/**
 * Monte Carlo check of the pipeline's generative model with uniform
 * per-layer rates and unit reach probabilities. Writes the empirical
 * covered risk and a three-standard-error half-width.
 *
 * # Safety
 * `out_risk` and `out_half_width` must be valid pointers.
 */
enum ExitgateStatus exitgate_simulate_uniform(uint32_t layers,
                                              double q,
                                              double q_d,
                                              double gamma,
                                              uint64_t trials,
                                              uint64_t seed,
                                              double *out_risk,
                                              double *out_half_width);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXITGATE_H */
