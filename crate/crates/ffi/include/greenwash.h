#ifndef GREENWASH_H
#define GREENWASH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GwClassification {
  GW_CLASSIFICATION_GREENWASHING = 0,
  GW_CLASSIFICATION_NON_GREENWASHING = 1,
  GW_CLASSIFICATION_UNCLASSIFIED = 2,
} GwClassification;

typedef enum GwItemSource {
  GW_ITEM_SOURCE_KEYWORD = 0,
  GW_ITEM_SOURCE_LLM = 1,
  GW_ITEM_SOURCE_STANCE = 2,
} GwItemSource;

typedef enum GwStage {
  GW_STAGE_OUTCOME = 0,
  GW_STAGE_MISSINGNESS = 1,
} GwStage;

/**
 * Result code of every fallible call.
 */
typedef enum GwStatus {
  GW_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  GW_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  GW_STATUS_INVALID_UTF8 = 2,
  /**
   * Index or enum value out of range.
   */
  GW_STATUS_OUT_OF_RANGE = 3,
  GW_STATUS_IO = 4,
  /**
   * Malformed input file or text.
   */
  GW_STATUS_INPUT = 5,
  /**
   * Well-formed input that breaks a precondition.
   */
  GW_STATUS_VALIDATION = 6,
  /**
   * Estimation or regression failure.
   */
  GW_STATUS_MODEL = 7,
  GW_STATUS_PANIC = 8,
} GwStatus;

/**
 * Opaque indicator matrix.
 */
typedef struct GwMatrix GwMatrix;

/**
 * Opaque fitted posterior.
 */
typedef struct GwPosterior GwPosterior;

/**
 * Posterior mean and 90% interval.
 */
typedef struct GwSummary {
  double mean;
  double q05;
  double q95;
} GwSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *gw_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *gw_last_error(void);

/**
 * Reads a matrix file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GwStatus gw_matrix_read(const char *path, struct GwMatrix **out);

/**
 * Builds a matrix from row-major cells (`0` no, `1` yes, `2` missing).
 * Keyword items may not contain missing cells.
 *
 * # Safety
 * `ad_ids` holds `n_ads` strings, `item_keys` and `sources` hold `n_items`
 * entries, `cells` holds `n_ads * n_items` bytes, `out` is valid.
 */
enum GwStatus gw_matrix_new(size_t n_ads,
                            const char *const *ad_ids,
                            size_t n_items,
                            const char *const *item_keys,
                            const enum GwItemSource *sources,
                            const uint8_t *cells,
                            struct GwMatrix **out);

/**
 * # Safety
 * `m` must be a live matrix handle or null.
 */
size_t gw_matrix_n_ads(const struct GwMatrix *m);

/**
 * # Safety
 * `m` must be a live matrix handle or null.
 */
size_t gw_matrix_n_items(const struct GwMatrix *m);

/**
 * # Safety
 * `m` must be a live matrix handle and `path` a NUL-terminated string.
 */
enum GwStatus gw_matrix_write(const struct GwMatrix *m, const char *path);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards. Null is a no-op.
 */
void gw_matrix_free(struct GwMatrix *m);

/**
 * Fits the model. `config_toml` holds IRT settings (null for defaults);
 * `seed` overrides its seed.
 *
 * # Safety
 * `m` must be a live matrix handle, `config_toml` null or NUL-terminated,
 * `out` valid.
 */
enum GwStatus gw_fit(const struct GwMatrix *m,
                     const char *config_toml,
                     uint64_t seed,
                     struct GwPosterior **out);

/**
 * # Safety
 * `p` must be a live posterior handle or null.
 */
size_t gw_posterior_n_ads(const struct GwPosterior *p);

/**
 * Score summary and classification of ad `i` (matrix row order).
 *
 * # Safety
 * `p` must be a live posterior handle; `out` valid; `class_out` valid or null.
 */
enum GwStatus gw_posterior_score(const struct GwPosterior *p,
                                 size_t i,
                                 struct GwSummary *out,
                                 enum GwClassification *class_out);

/**
 * Discrimination summary of item `key` in `stage`, a [`GwStage`] value.
 *
 * # Safety
 * `p` must be a live posterior handle, `key` NUL-terminated, `out` valid.
 */
enum GwStatus gw_posterior_item(const struct GwPosterior *p,
                                const char *key,
                                uint32_t stage,
                                struct GwSummary *out);

/**
 * Writes `scores.tsv`, `items.tsv` and `diagnostics.tsv` into `dir`.
 *
 * # Safety
 * `p` must be a live posterior handle and `dir` NUL-terminated.
 */
enum GwStatus gw_posterior_write(const struct GwPosterior *p, const char *dir);

/**
 * # Safety
 * `p` must come from this library and not be used afterwards. Null is a no-op.
 */
void gw_posterior_free(struct GwPosterior *p);

/**
 * The three-way rule applied to a posterior summary.
 */
enum GwClassification gw_classify(struct GwSummary summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GREENWASH_H */
