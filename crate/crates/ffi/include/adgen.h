#ifndef ADGEN_H
#define ADGEN_H

/* Generated by cbindgen from adgen-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every API call.
 */
typedef enum {
  ADGEN_STATUS_OK = 0,
  ADGEN_STATUS_NULL_ARGUMENT = 1,
  ADGEN_STATUS_INVALID_UTF8 = 2,
  ADGEN_STATUS_IO_ERROR = 3,
  ADGEN_STATUS_INVALID_INPUT = 4,
  ADGEN_STATUS_INTERNAL_ERROR = 5,
} AdgenStatus;

/*
 Opaque reference bank handle.
 */
typedef struct AdgenBank AdgenBank;

/*
 Opaque model handle (checkpointed weights plus configuration).
 */
typedef struct AdgenModel AdgenModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *adgen_version(void);

/*
 Message of the most recent error on this thread. Valid until the next
 failing call on the same thread.
 */
const char *adgen_last_error_message(void);

/*
 Load a model from a checkpoint file written by `adgen train`.

 # Safety
 `path` must be a NUL-terminated string; `out_model` must be a valid
 pointer. On success `*out_model` owns the handle until
 [`adgen_model_free`].
 */
AdgenStatus adgen_model_load(const char *path, AdgenModel **out_model);

/*
 # Safety
 `model` must be a pointer returned by [`adgen_model_load`] (or null).
 */
void adgen_model_free(AdgenModel *model);

/*
 Side length of the square input the model expects; 0 on null.

 # Safety
 `model` must be null or a live model handle.
 */
uint32_t adgen_model_input_size(const AdgenModel *model);

/*
 Build a reference bank from every PNG in `dir` (normal images of the
 target domain), keeping a `fraction` of them chosen by `seed`.

 # Safety
 `model` must be a live model handle; `dir` a NUL-terminated string;
 `out_bank` a valid pointer. On success `*out_bank` owns the handle until
 [`adgen_bank_free`].
 */
AdgenStatus adgen_bank_build(const AdgenModel *model,
                             const char *dir,
                             double fraction,
                             uint64_t seed,
                             AdgenBank **out_bank);

/*
 # Safety
 `bank` must be a pointer returned by [`adgen_bank_build`] (or null).
 */
void adgen_bank_free(AdgenBank *bank);

/*
 Number of images pooled into the bank; 0 on null.

 # Safety
 `bank` must be null or a live bank handle.
 */
uint32_t adgen_bank_image_count(const AdgenBank *bank);

/*
 Image-level anomaly score of one image file, in (0, 1).

 # Safety
 `model` and `bank` must be live handles; `path` NUL-terminated;
 `out_score` a valid pointer.
 */
AdgenStatus adgen_score_image(const AdgenModel *model,
                              const AdgenBank *bank,
                              const char *path,
                              float *out_score);

/*
 Pixel-level anomaly map of one image file. `out_map` receives
 `input_size × input_size` row-major scores in (0, 1); `map_len` must equal
 that product (see [`adgen_model_input_size`]).

 # Safety
 `model` and `bank` must be live handles; `path` NUL-terminated; `out_map`
 must point to at least `map_len` floats.
 */
AdgenStatus adgen_score_pixels(const AdgenModel *model,
                               const AdgenBank *bank,
                               const char *path,
                               float *out_map,
                               size_t map_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADGEN_H */
