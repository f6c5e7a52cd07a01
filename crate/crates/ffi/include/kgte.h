#ifndef KGTE_H
#define KGTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KgteStatus {
  KGTE_STATUS_OK = 0,
  KGTE_STATUS_NULL_POINTER = 1,
  KGTE_STATUS_INVALID_UTF8 = 2,
  KGTE_STATUS_INVALID_ARGUMENT = 3,
  KGTE_STATUS_IO = 4,
  KGTE_STATUS_PARSE = 5,
  KGTE_STATUS_MISMATCH = 6,
  KGTE_STATUS_REMOTE = 7,
  KGTE_STATUS_INTERNAL = 8,
  KGTE_STATUS_PANIC = 9,
} KgteStatus;

/**
 * Opaque handle: a vector index together with the encoder that built it.
 */
typedef struct KgteIndex KgteIndex;

typedef struct KgteFit {
  double slope;
  double intercept;
  double r2;
  size_t n_points;
} KgteFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *kgte_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next kgte call on the same thread.
 */
const char *kgte_last_error(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from a kgte function and not have been freed already.
 */
void kgte_string_free(char *s);

/**
 * Canonical surface form of `input`.
 *
 * # Safety
 * `input` must be a NUL-terminated string; `out` must be writable.
 */
enum KgteStatus kgte_normalize(const char *input, char **out);

/**
 * Parses generator output; writes a JSON object
 * `{"triplets": [[s,p,o],...], "malformed_lines": n, "truncated_to_max": b}`.
 *
 * # Safety
 * `raw` must be a NUL-terminated string; `out` must be writable.
 */
enum KgteStatus kgte_parse_triplets_json(const char *raw, size_t max_triplets, char **out);

/**
 * Micro-averaged scores. Both inputs are JSON arrays (one entry per
 * sentence) of arrays of `[s, p, o]`; writes the full report as JSON.
 *
 * # Safety
 * Inputs must be NUL-terminated strings; `out` must be writable.
 */
enum KgteStatus kgte_micro_f1_json(const char *predictions, const char *gold, char **out);

/**
 * Least-squares fit of `y` on `x` (or on `ln x` when `log_x` is set).
 *
 * # Safety
 * `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
 */
enum KgteStatus kgte_linear_fit(const double *xs,
                                const double *ys,
                                size_t n,
                                bool log_x,
                                struct KgteFit *out);

/**
 * `(p / n_kb)^n`; NaN when `n_kb` is 0.
 */
double kgte_random_f1_closed_form(double p, size_t n_kb, size_t n);

/**
 * Builds an index over the train + validation KB of a dataset manifest
 * with the hashed n-gram encoder. `kind` is "triplet" or "example";
 * `dimension` 0 selects the default.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum KgteStatus kgte_index_build(const char *manifest,
                                 const char *kind,
                                 size_t dimension,
                                 struct KgteIndex **out);

/**
 * Loads an index file written by `kgte index` or [`kgte_index_save`].
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum KgteStatus kgte_index_load(const char *path, size_t dimension, struct KgteIndex **out);

/**
 * # Safety
 * `idx` must be a live handle; `path` NUL-terminated.
 */
enum KgteStatus kgte_index_save(const struct KgteIndex *idx, const char *path);

/**
 * Number of nodes; 0 for a NULL handle.
 *
 * # Safety
 * `idx` must be NULL or a live handle.
 */
size_t kgte_index_len(const struct KgteIndex *idx);

/**
 * Retrieves the context for `sentence` and writes it as JSON
 * `{"n_kb_requested": k, "mode": ..., "items": [{"node_id", "score", "item"}, ...]}`.
 *
 * # Safety
 * `idx` must be a live handle; `sentence` NUL-terminated; `out` writable.
 */
enum KgteStatus kgte_index_retrieve_json(const struct KgteIndex *idx,
                                         const char *sentence,
                                         size_t n_kb,
                                         char **out);

/**
 * Releases an index handle. NULL is ignored.
 *
 * # Safety
 * `idx` must come from [`kgte_index_build`] or [`kgte_index_load`] and not
 * have been freed already.
 */
void kgte_index_free(struct KgteIndex *idx);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGTE_H */
