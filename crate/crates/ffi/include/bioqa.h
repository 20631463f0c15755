#ifndef BIOQA_H
#define BIOQA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BqStatus {
  BQ_STATUS_OK = 0,
  BQ_STATUS_NULL_ARGUMENT = 1,
  BQ_STATUS_INVALID_UTF8 = 2,
  BQ_STATUS_NOT_FOUND = 3,
  BQ_STATUS_INVALID_QUERY = 4,
  BQ_STATUS_IO = 5,
  BQ_STATUS_INVALID_INPUT = 6,
  BQ_STATUS_INTERNAL = 7,
} BqStatus;

/**
 * Opaque corpus handle.
 */
typedef struct BqCorpus BqCorpus;

/**
 * Opaque index handle.
 */
typedef struct BqIndex BqIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *bq_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void bq_string_free(char *s);

/**
 * A new empty corpus.
 */
struct BqCorpus *bq_corpus_new(void);

/**
 * # Safety
 * `dir` must be a NUL-terminated string; `out` valid for writing.
 */
enum BqStatus bq_corpus_open(const char *dir, struct BqCorpus **out);

/**
 * Ingest line-delimited JSON records held in `jsonl`. Counts of stored and
 * rejected records are written to the non-null count pointers.
 *
 * # Safety
 * `corpus` must be a live handle; `jsonl` a NUL-terminated string; the
 * count pointers null or valid for writing.
 */
enum BqStatus bq_corpus_ingest_jsonl(struct BqCorpus *corpus,
                                     const char *jsonl,
                                     size_t *out_count,
                                     size_t *out_rejected);

/**
 * # Safety
 * `corpus` must be a live handle; `dir` a NUL-terminated string.
 */
enum BqStatus bq_corpus_save(const struct BqCorpus *corpus, const char *dir);

/**
 * Number of documents, 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t bq_corpus_len(const struct BqCorpus *corpus);

/**
 * The document as a JSON object `{"doc_id", "title", "abstract"}`.
 *
 * # Safety
 * `corpus` must be a live handle; `doc_id` a NUL-terminated string; `out`
 * valid for writing.
 */
enum BqStatus bq_corpus_get(const struct BqCorpus *corpus, const char *doc_id, char **out_json);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void bq_corpus_free(struct BqCorpus *corpus);

/**
 * Build a BM25 index over the corpus.
 *
 * # Safety
 * `corpus` must be a live handle; `out` valid for writing.
 */
enum BqStatus bq_index_build(const struct BqCorpus *corpus,
                             double k1,
                             double b,
                             struct BqIndex **out);

/**
 * # Safety
 * `dir` must be a NUL-terminated string; `out` valid for writing.
 */
enum BqStatus bq_index_load(const char *dir, struct BqIndex **out);

/**
 * # Safety
 * `index` must be a live handle; `dir` a NUL-terminated string.
 */
enum BqStatus bq_index_save(const struct BqIndex *index, const char *dir);

/**
 * Run a query; the result is a JSON array of `{"doc_id", "score",
 * "provenance"}` in rank order.
 *
 * # Safety
 * `index` must be a live handle; `query` a NUL-terminated string; `out`
 * valid for writing.
 */
enum BqStatus bq_index_search(const struct BqIndex *index,
                              const char *query,
                              size_t limit,
                              char **out_json);

/**
 * Number of indexed documents, 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t bq_index_doc_count(const struct BqIndex *index);

/**
 * # Safety
 * `index` must be null or a handle not yet freed.
 */
void bq_index_free(struct BqIndex *index);

/**
 * Validate a query string. The JSON result holds the validation report
 * and, when valid, the canonical rendering under `"canonical"`. An invalid
 * query is not a call failure: the status is OK and `ok` is false.
 *
 * # Safety
 * `query` must be a NUL-terminated string; `out` valid for writing.
 */
enum BqStatus bq_query_check(const char *query, char **out_json);

/**
 * Score a BioASQ submission file against a gold test set; the JSON result
 * is the evaluation report.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `out` valid for writing.
 */
enum BqStatus bq_evaluate(const char *gold_path, const char *pred_path, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIOQA_H */
