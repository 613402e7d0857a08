/* muquant C API: load checkpoints, extract features, classify, quantize, CCA. */

#ifndef MUQUANT_H
#define MUQUANT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function.
typedef enum MqStatus {
  // Success.
  MQ_STATUS_OK = 0,
  // A pointer was null or an argument violated a precondition.
  MQ_STATUS_INVALID_ARGUMENT = 1,
  // File could not be read or written.
  MQ_STATUS_IO_ERROR = 2,
  // Malformed checkpoint container or incompatible audio.
  MQ_STATUS_FORMAT_ERROR = 3,
  // The checkpoint has no classification head.
  MQ_STATUS_MISSING_HEAD = 4,
  // Unexpected internal failure; see mq_last_error().
  MQ_STATUS_INTERNAL_ERROR = 5,
} MqStatus;

// Loaded checkpoint: model weights plus optional classification head.
typedef struct MqModel MqModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mq_version(void);

// Message of the most recent error on this thread (empty when none).
// Valid until the next failing call on the same thread.
const char *mq_last_error(void);

// Load a checkpoint container from `path` into a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MqStatus mq_model_load(const char *path, struct MqModel **out);

// Free a handle returned by `mq_model_load` (null is a no-op).
//
// # Safety
// `model` must be a pointer returned by `mq_model_load`, freed once.
void mq_model_free(struct MqModel *model);

// Dimension of extracted feature vectors.
//
// # Safety
// `model` must be a valid handle.
size_t mq_model_feature_dim(const struct MqModel *model);

// Number of classifier outputs, 0 when the checkpoint has no head.
//
// # Safety
// `model` must be a valid handle.
size_t mq_model_num_classes(const struct MqModel *model);

// Expected input sample rate in Hz.
//
// # Safety
// `model` must be a valid handle.
uint32_t mq_model_sample_rate(const struct MqModel *model);

// Mean-pooled context features for a mono waveform in [-1, 1].
// `out` must hold exactly `mq_model_feature_dim` floats.
//
// # Safety
// `samples` must point to `len` floats, `out` to `out_len` floats.
enum MqStatus mq_extract_features(const struct MqModel *model,
                                  const float *samples,
                                  size_t len,
                                  uint32_t sample_rate,
                                  float *out,
                                  size_t out_len);

// Classify a waveform with a finetuned checkpoint. `out_probs` may be null;
// when given it must hold `mq_model_num_classes` floats.
//
// # Safety
// Pointer arguments must be valid for their stated lengths.
enum MqStatus mq_classify(const struct MqModel *model,
                          const float *samples,
                          size_t len,
                          uint32_t sample_rate,
                          uint32_t *out_class,
                          float *out_probs,
                          size_t probs_len);

// Discrete joint code ids (one per frame) for a waveform, from the
// quantizer in deterministic eval mode. Writes up to `cap` codes and stores
// the frame count in `out_count`; fails if `cap` is too small.
//
// # Safety
// Pointer arguments must be valid for their stated lengths.
enum MqStatus mq_quantize_codes(const struct MqModel *model,
                                const float *samples,
                                size_t len,
                                uint32_t sample_rate,
                                uint32_t *out_codes,
                                size_t cap,
                                size_t *out_count);

// Canonical correlation analysis of two row-major matrices W [n x k] and
// Y [n x j]: writes min(k, j) coefficients (descending) plus their mean
// and the projection-weighted mean.
//
// # Safety
// `w` must hold n*k doubles, `y` n*j, `out_coefficients` min(k, j).
enum MqStatus mq_cca(const double *w,
                     size_t n,
                     size_t k,
                     const double *y,
                     size_t j,
                     double *out_coefficients,
                     double *out_mean,
                     double *out_pwcca);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MUQUANT_H */
