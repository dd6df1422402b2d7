#ifndef DCCDI_H
#define DCCDI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Methods accepted by [`dccdi_evaluate`].
 */
typedef enum {
  DCCDI_METHOD_DCCDI = 0,
  DCCDI_METHOD_DCCDI_NO_TEXT = 1,
  DCCDI_METHOD_PROTOTYPICAL = 2,
  DCCDI_METHOD_MATCHING = 3,
  DCCDI_METHOD_RELATION = 4,
  DCCDI_METHOD_GRAPH_METRIC = 5,
} DccdiMethod;

/**
 * Result of every fallible call.
 */
typedef enum {
  DCCDI_STATUS_OK = 0,
  DCCDI_STATUS_NULL_POINTER = 1,
  DCCDI_STATUS_INVALID_ARGUMENT = 2,
  DCCDI_STATUS_SHAPE = 3,
  DCCDI_STATUS_NUMERICAL = 4,
  DCCDI_STATUS_IO = 5,
  DCCDI_STATUS_CONFIG = 6,
  DCCDI_STATUS_PANIC = 7,
} DccdiStatus;

/**
 * Experiment configuration.
 */
typedef struct DccdiConfig DccdiConfig;

/**
 * A labelled two-view dataset.
 */
typedef struct DccdiDataset DccdiDataset;

/**
 * A meta-trained model.
 */
typedef struct DccdiModel DccdiModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into the library on this thread.
 */
const char *dccdi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dccdi_version(void);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be valid for writes.
 */
DccdiStatus dccdi_config_new(DccdiConfig **out);

/**
 * Configuration parsed from TOML text; missing keys take default values.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` valid for writes.
 */
DccdiStatus dccdi_config_from_toml(const char *toml, DccdiConfig **out);

/**
 * Replaces the base seed.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
DccdiStatus dccdi_config_set_seed(DccdiConfig *cfg, uint64_t seed);

/**
 * Sets the number of evaluation episodes.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
DccdiStatus dccdi_config_set_episodes(DccdiConfig *cfg, size_t episodes);

/**
 * # Safety
 * `cfg` must be NULL or a handle not yet freed.
 */
void dccdi_config_free(DccdiConfig *cfg);

/**
 * Generates the target domain of `cfg` when `target` is true, else the source.
 *
 * # Safety
 * `cfg` must be a live handle and `out` valid for writes.
 */
DccdiStatus dccdi_dataset_generate(const DccdiConfig *cfg, bool target, DccdiDataset **out);

/**
 * Loads a JSON-lines dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
DccdiStatus dccdi_dataset_load(const char *path, DccdiDataset **out);

/**
 * Number of samples; 0 for NULL.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t dccdi_dataset_len(const DccdiDataset *ds);

/**
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void dccdi_dataset_free(DccdiDataset *ds);

/**
 * Stage 1 and stage 2 meta-training on `source`.
 *
 * # Safety
 * Handles must be live and `out` valid for writes.
 */
DccdiStatus dccdi_model_train(const DccdiConfig *cfg, const DccdiDataset *source, DccdiModel **out);

/**
 * Untrained model initialized from `cfg`'s shape and seed.
 *
 * # Safety
 * `cfg` must be a live handle and `out` valid for writes.
 */
DccdiStatus dccdi_model_new(const DccdiConfig *cfg, DccdiModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
DccdiStatus dccdi_model_load(const char *path, DccdiModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
DccdiStatus dccdi_model_save(const DccdiModel *model, const char *path);

/**
 * Width of the trunk embedding; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t dccdi_model_embed_dim(const DccdiModel *model);

/**
 * Embeds `rows x cols` visual features into `out` (`rows x embed_dim`).
 *
 * # Safety
 * `x` must hold `rows * cols` values and `out` room for
 * `rows * dccdi_model_embed_dim(model)`.
 */
DccdiStatus dccdi_model_embed(const DccdiModel *model,
                              const double *x,
                              size_t rows,
                              size_t cols,
                              double *out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void dccdi_model_free(DccdiModel *model);

/**
 * Mean episode accuracy and 95% half-width of one method over
 * `cfg`'s evaluation episodes.
 *
 * # Safety
 * Handles must be live; `mean` and `ci95` valid for writes.
 */
DccdiStatus dccdi_evaluate(const DccdiModel *model,
                           const DccdiDataset *target,
                           const DccdiConfig *cfg,
                           DccdiMethod method,
                           size_t shots,
                           double *mean,
                           double *ci95);

/**
 * Sum of the top `k` canonical correlations of two `n`-row views, with
 * `r1` added to both covariance diagonals. Gradients are written to `dz1`
 * (`n x d1`) and `dz2` (`n x d2`) when those are non-NULL.
 *
 * # Safety
 * Buffers must hold the stated number of values.
 */
DccdiStatus dccdi_correlation(const double *z1,
                              const double *z2,
                              size_t n,
                              size_t d1,
                              size_t d2,
                              double r1,
                              size_t k,
                              double *value,
                              double *dz1,
                              double *dz2);

/**
 * Leading `k` canonical correlations of `x` (`n x p`) and `y` (`n x q`),
 * descending, written to `out`.
 *
 * # Safety
 * Buffers must hold the stated number of values; `out` room for `k`.
 */
DccdiStatus dccdi_linear_cca(const double *x,
                             const double *y,
                             size_t n,
                             size_t p,
                             size_t q,
                             size_t k,
                             double r1,
                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCCDI_H */
