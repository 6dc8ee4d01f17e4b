#ifndef TAYLORNET_H
#define TAYLORNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum TnStatus {
  TN_STATUS_OK = 0,
  // Bad argument, shape or configuration.
  TN_STATUS_INVALID_ARGUMENT = 1,
  // Non-finite values or a numerical tolerance breach.
  TN_STATUS_NUMERICAL = 2,
  // File could not be read or written.
  TN_STATUS_IO = 3,
  // File contents are malformed.
  TN_STATUS_FORMAT = 4,
  // A required pointer was null.
  TN_STATUS_NULL_POINTER = 5,
  // Internal panic, caught at the boundary.
  TN_STATUS_PANIC = 6,
} TnStatus;

// A loaded checkpoint ready for prediction.
typedef struct TnModel TnModel;

// Per-frame metrics; see the library documentation for conventions.
typedef struct TnFrameMetrics {
  // Sum of squared pixel errors.
  double mse;
  // Sum of absolute pixel errors.
  double mae;
  double ssim;
  double psnr;
  // Summed binary cross-entropy.
  double bce;
  // Mean squared error per pixel.
  double mse_pixel;
} TnFrameMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *tn_version(void);

// Message of the last failed call on this thread ("" after a success).
// The pointer stays valid until the next `tn_*` call on the same thread.
const char *tn_last_error_message(void);

// Load a checkpoint file. On success `*out` owns a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum TnStatus tn_model_load(const char *path, struct TnModel **out);

// Release a handle from `tn_model_load`. Null is ignored.
//
// # Safety
// `model` must come from `tn_model_load` and not be used afterwards.
void tn_model_free(struct TnModel *model);

// Frame geometry and number of conditioning frames the model was trained with.
//
// # Safety
// All pointers must be valid.
enum TnStatus tn_model_shape(const struct TnModel *model,
                             size_t *channels,
                             size_t *height,
                             size_t *width,
                             size_t *input_len);

// Free-running prediction of `n_future` frames after `input_frames`
// conditioning frames per sequence. `out` must hold
// `batch · n_future · C · H · W` floats.
//
// # Safety
// `inputs` must point to `batch · input_frames · C · H · W` floats and
// `out` to `out_len` writable floats.
enum TnStatus tn_model_predict(const struct TnModel *model,
                               const float *inputs,
                               size_t batch,
                               size_t input_frames,
                               size_t n_future,
                               float *out,
                               size_t out_len);

// Metrics of one `channels × height × width` frame pair.
//
// # Safety
// `pred` and `target` must each point to `channels · height · width` floats.
enum TnStatus tn_frame_metrics(const float *pred,
                               const float *target,
                               size_t channels,
                               size_t height,
                               size_t width,
                               struct TnFrameMetrics *out);

// Bouncing-digit sequences `start .. start + count` of a split
// (0 train, 1 test) for a base seed, on a `canvas × canvas` frame
// (32 uses 14-pixel glyphs, 64 uses 28-pixel glyphs). `out` must hold
// `count · length · canvas²` floats.
//
// # Safety
// `out` must point to `out_len` writable floats.
enum TnStatus tn_generate_bouncing(size_t canvas,
                                   uint32_t split,
                                   uint64_t base_seed,
                                   uint64_t start,
                                   size_t count,
                                   size_t length,
                                   float *out,
                                   size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAYLORNET_H */
