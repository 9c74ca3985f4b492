#ifndef TRAJRECON_H
#define TRAJRECON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum TrStatus {
  TR_STATUS_OK = 0,
  TR_STATUS_INVALID_ARGUMENT = 1,
  TR_STATUS_INVALID_STATE = 2,
  TR_STATUS_FORMAT = 3,
  TR_STATUS_DIVERGENCE = 4,
  TR_STATUS_IO = 5,
  TR_STATUS_JSON = 6,
  TR_STATUS_NULL_POINTER = 7,
  TR_STATUS_PANIC = 8,
} TrStatus;

/*
 Opaque reconstruction pipeline: geometry, grids and redundancy weights.
 */
typedef struct TrPipeline TrPipeline;

/*
 Array sizes of a pipeline.
 */
typedef struct TrDims {
  size_t n_views;
  size_t n_v;
  size_t n_u;
  size_t n_mu;
  size_t n_s;
  size_t nz;
  size_t ny;
  size_t nx;
  /*
   `n_views · n_v · n_u`.
   */
  size_t projection_len;
  /*
   `nz · ny · nx`.
   */
  size_t volume_len;
  /*
   `n_views · n_mu · n_s`.
   */
  size_t weights_len;
} TrDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, a static NUL-terminated string.
 */
const char *tr_version(void);

/*
 Message of the last failed call on this thread, or NULL. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *tr_last_error(void);

/*
 Builds a pipeline from configuration text (`key = value` lines; keys not
 given keep the desk defaults; NULL means all defaults). The redundancy
 layer starts at the analytic weights.

 # Safety
 `config` must be NULL or a NUL-terminated string; `out` must be writable.
 */
enum TrStatus tr_pipeline_new(const char *config, struct TrPipeline **out);

/*
 Releases a pipeline. NULL is ignored.

 # Safety
 `p` must come from [`tr_pipeline_new`] and not be used afterwards.
 */
void tr_pipeline_free(struct TrPipeline *p);

/*
 # Safety
 `p` must be a live pipeline and `out` writable.
 */
enum TrStatus tr_pipeline_dims(const struct TrPipeline *p, struct TrDims *out);

/*
 Copies the redundancy weights in effect into `out`.

 # Safety
 `p` must be a live pipeline; `out` must hold `len` doubles.
 */
enum TrStatus tr_pipeline_get_weights(const struct TrPipeline *p, double *out, size_t len);

/*
 Replaces the redundancy weights.

 # Safety
 `p` must be a live pipeline; `weights` must hold `len` doubles.
 */
enum TrStatus tr_pipeline_set_weights(struct TrPipeline *p, const double *weights, size_t len);

/*
 Simulates projections of a volume with the ray-driven projector.

 # Safety
 `p` must be a live pipeline; the arrays must hold the given counts.
 */
enum TrStatus tr_forward_project(const struct TrPipeline *p,
                                 const double *volume,
                                 size_t volume_len,
                                 double *projections,
                                 size_t projection_len);

/*
 Reconstructs a volume from projections with the current weights.

 # Safety
 `p` must be a live pipeline; the arrays must hold the given counts.
 */
enum TrStatus tr_reconstruct(const struct TrPipeline *p,
                             const double *projections,
                             size_t projection_len,
                             double *volume,
                             size_t volume_len);

/*
 Applies the transpose of [`tr_reconstruct`] (as a linear map of the
 projections) to a volume.

 # Safety
 `p` must be a live pipeline; the arrays must hold the given counts.
 */
enum TrStatus tr_reconstruct_adjoint(const struct TrPipeline *p,
                                     const double *volume,
                                     size_t volume_len,
                                     double *projections,
                                     size_t projection_len);

/*
 Gradient of a loss with respect to the redundancy weights, given the
 projections and the loss gradient with respect to the reconstruction.

 # Safety
 `p` must be a live pipeline; the arrays must hold the given counts.
 */
enum TrStatus tr_grad_weights(const struct TrPipeline *p,
                              const double *projections,
                              size_t projection_len,
                              const double *volume_grad,
                              size_t volume_len,
                              double *weights_grad,
                              size_t weights_len);

/*
 Trainable parameters of the redundancy layer; `k = 0` means uncompressed.
 */
uint64_t tr_parameter_count(uint64_t n_views, uint64_t bins_per_view, uint64_t k);

/*
 Parameter reduction of rank-`k` compression in percent.
 */
double tr_parameter_reduction_percent(uint64_t n_views, uint64_t bins_per_view, uint64_t k);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJRECON_H */
