#ifndef DDET_H
#define DDET_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Colour space for [`ddet_psnr`].
 */
typedef enum DdetPsnrMode {
  DDET_PSNR_MODE_RGB = 0,
  DDET_PSNR_MODE_Y = 1,
} DdetPsnrMode;

/**
 * Result code of every fallible call.
 */
typedef enum DdetStatus {
  DDET_STATUS_OK = 0,
  DDET_STATUS_NULL_POINTER = 1,
  DDET_STATUS_INVALID_ARGUMENT = 2,
  DDET_STATUS_DIMENSION = 3,
  DDET_STATUS_IO = 4,
  DDET_STATUS_FORMAT = 5,
  DDET_STATUS_NON_FINITE = 6,
  DDET_STATUS_CONFIG = 7,
  DDET_STATUS_PANIC = 8,
} DdetStatus;

/**
 * Opaque model handle.
 */
typedef struct DdetModel DdetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next call into this library from the same thread.
 */
const char *ddet_last_error_message(void);

/**
 * Creates the default model (kernels 3/5/7, 16 residual blocks, 64
 * channels, detail branch and refinement) with weights drawn from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to a `DdetModel*`.
 */
enum DdetStatus ddet_model_new_default(uint64_t seed, struct DdetModel **out);

/**
 * Creates a model with a custom configuration.
 *
 * # Safety
 * `kernel_sizes` must point to `num_kernel_sizes` values and `out` must be
 * a valid pointer to a `DdetModel*`.
 */
enum DdetStatus ddet_model_new(const uint32_t *kernel_sizes,
                               size_t num_kernel_sizes,
                               uint32_t num_res_blocks,
                               uint32_t base_channels,
                               bool use_cdm,
                               bool use_pr,
                               uint64_t seed,
                               struct DdetModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from `ddet_model_new*` not yet freed.
 */
void ddet_model_free(struct DdetModel *model);

/**
 * Replaces the weights of `model` with those in a checkpoint. The
 * checkpoint must match the model's configuration exactly.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum DdetStatus ddet_model_load(struct DdetModel *model, const char *path);

/**
 * Writes the model weights (with an empty optimizer state) to `path`.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum DdetStatus ddet_model_save(const struct DdetModel *model, const char *path);

/**
 * Number of scalar parameters.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DdetStatus ddet_model_param_count(const struct DdetModel *model, uint64_t *out);

/**
 * Runs the network on an `n × 3 × h × w` batch; `output` has the same size.
 *
 * # Safety
 * `input` and `output` must each hold `n·3·h·w` floats.
 */
enum DdetStatus ddet_model_forward(const struct DdetModel *model,
                                   const float *input,
                                   size_t n,
                                   size_t h,
                                   size_t w,
                                   float *output);

/**
 * Applies per-pixel `k × k` kernels (`n × k² × h × w`, row-major taps) to
 * every channel of an `n × c × h × w` image with zero padding.
 *
 * # Safety
 * `image` and `output` must hold `n·c·h·w` floats and `kernels` `n·k²·h·w`.
 */
enum DdetStatus ddet_dynamic_filter(const float *image,
                                    size_t n,
                                    size_t c,
                                    size_t h,
                                    size_t w,
                                    const float *kernels,
                                    size_t k,
                                    float *output);

/**
 * PSNR in dB with peak 1; `+inf` for identical inputs.
 *
 * # Safety
 * `a` and `b` must hold `n·c·h·w` floats; `out` must be valid.
 */
enum DdetStatus ddet_psnr(const float *a,
                          const float *b,
                          size_t n,
                          size_t c,
                          size_t h,
                          size_t w,
                          enum DdetPsnrMode mode,
                          double *out);

/**
 * Mean SSIM on luma (Gaussian 11×11 window, σ 1.5).
 *
 * # Safety
 * `a` and `b` must hold `n·c·h·w` floats; `out` must be valid.
 */
enum DdetStatus ddet_ssim(const float *a,
                          const float *b,
                          size_t n,
                          size_t c,
                          size_t h,
                          size_t w,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDET_H */
