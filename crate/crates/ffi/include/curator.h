#ifndef CURATOR_H
#define CURATOR_H

/* Generated by cbindgen from curator-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible call.
 */
typedef enum CuratorStatus {
  CURATOR_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  CURATOR_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CURATOR_STATUS_UTF8 = 2,
  /**
   * The underlying file could not be read or written.
   */
  CURATOR_STATUS_IO = 3,
  /**
   * The file exists but is not a valid artifact of the expected format.
   */
  CURATOR_STATUS_FORMAT = 4,
  /**
   * The requested record does not exist.
   */
  CURATOR_STATUS_NOT_FOUND = 5,
  /**
   * A vector length does not match the expected dimension.
   */
  CURATOR_STATUS_DIM_MISMATCH = 6,
  /**
   * The caller-supplied buffer is too small.
   */
  CURATOR_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * Inputs are structurally invalid (mismatched heads, bad config).
   */
  CURATOR_STATUS_INVALID_ARGUMENT = 8,
  /**
   * An unexpected internal failure; see curator_last_error().
   */
  CURATOR_STATUS_INTERNAL = 9,
} CuratorStatus;

/**
 * Heads paired with their thresholds, ready for keep/drop decisions.
 */
typedef struct CuratorEnsemble CuratorEnsemble;

/**
 * A loaded scoring head.
 */
typedef struct CuratorHead CuratorHead;

/**
 * An open embedding store.
 */
typedef struct CuratorStore CuratorStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. Valid until
 * the next failing call on the same thread; never NULL.
 */
const char *curator_last_error(void);

/**
 * Static library version string.
 */
const char *curator_version(void);

/**
 * Loads a head file. On success writes a handle to `out`; release it with
 * [`curator_head_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CuratorStatus curator_head_load(const char *path, struct CuratorHead **out);

/**
 * # Safety
 * `head` must come from [`curator_head_load`] and not already be freed.
 */
void curator_head_free(struct CuratorHead *head);

/**
 * Embedding width the head expects; 0 when `head` is NULL.
 *
 * # Safety
 * `head` must be a live handle or NULL.
 */
size_t curator_head_input_dim(const struct CuratorHead *head);

/**
 * The head's identity (its label source). NULL when `head` is NULL; the
 * pointer stays valid while the handle lives.
 *
 * # Safety
 * `head` must be a live handle or NULL.
 */
const char *curator_head_id(const struct CuratorHead *head);

/**
 * Scores one embedding with the head.
 *
 * # Safety
 * `values` must point to `len` readable floats; `out_score` must be
 * writable.
 */
enum CuratorStatus curator_head_score(const struct CuratorHead *head,
                                      const float *values,
                                      size_t len,
                                      double *out_score);

/**
 * Opens an embedding store for random access; release with
 * [`curator_store_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CuratorStatus curator_store_open(const char *path, struct CuratorStore **out);

/**
 * # Safety
 * `store` must come from [`curator_store_open`] and not already be freed.
 */
void curator_store_free(struct CuratorStore *store);

/**
 * Vector width of the store; 0 when `store` is NULL.
 *
 * # Safety
 * `store` must be a live handle or NULL.
 */
size_t curator_store_dim(const struct CuratorStore *store);

/**
 * Number of vectors in the store; 0 when `store` is NULL.
 *
 * # Safety
 * `store` must be a live handle or NULL.
 */
uint64_t curator_store_count(const struct CuratorStore *store);

/**
 * Copies the vector for `doc_id` into `out_values` (capacity in floats).
 * Returns NotFound for unknown ids and BufferTooSmall when `capacity`
 * is under the store dimension.
 *
 * # Safety
 * `out_values` must point to `capacity` writable floats.
 */
enum CuratorStatus curator_store_get(const struct CuratorStore *store,
                                     const char *doc_id,
                                     float *out_values,
                                     size_t capacity);

/**
 * Deterministic mock embedding of `text`: `dim` floats, L2-normalized.
 *
 * # Safety
 * `text` must be NUL-terminated; `out_values` must point to `capacity`
 * writable floats with `capacity >= dim`.
 */
enum CuratorStatus curator_mock_embed(const char *text,
                                      size_t dim,
                                      uint64_t seed,
                                      float *out_values,
                                      size_t capacity);

/**
 * Builds a decision ensemble from loaded heads and a thresholds JSON file
 * (as written by the `curator thresholds` command). Heads are matched to
 * specs by id; each head needs exactly one spec. The heads are copied, so
 * the input handles may be freed afterwards.
 *
 * # Safety
 * `heads` must point to `head_count` live head handles; `thresholds_path`
 * must be NUL-terminated; `out` must be writable.
 */
enum CuratorStatus curator_ensemble_new(const struct CuratorHead *const *heads,
                                        size_t head_count,
                                        const char *thresholds_path,
                                        struct CuratorEnsemble **out);

/**
 * # Safety
 * `ensemble` must come from [`curator_ensemble_new`] and not already be
 * freed.
 */
void curator_ensemble_free(struct CuratorEnsemble *ensemble);

/**
 * Number of heads in the ensemble; 0 when `ensemble` is NULL.
 *
 * # Safety
 * `ensemble` must be a live handle or NULL.
 */
size_t curator_ensemble_len(const struct CuratorEnsemble *ensemble);

/**
 * Head id at `index` (ensemble order, matching `out_scores` of
 * [`curator_ensemble_decide`]); NULL when out of range.
 *
 * # Safety
 * `ensemble` must be a live handle or NULL.
 */
const char *curator_ensemble_head_id(const struct CuratorEnsemble *ensemble, size_t index);

/**
 * Scores one embedding with every head and applies the all-above rule.
 * `out_keep` receives the decision; when `out_scores` is non-NULL it
 * receives one score per head in ensemble order (capacity must cover the
 * head count).
 *
 * # Safety
 * `values` must point to `len` readable floats; `out_keep` must be
 * writable; `out_scores`, when non-NULL, must hold one double per head.
 */
enum CuratorStatus curator_ensemble_decide(const struct CuratorEnsemble *ensemble,
                                           const float *values,
                                           size_t len,
                                           double *out_scores,
                                           bool *out_keep);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CURATOR_H */
