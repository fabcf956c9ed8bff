#ifndef PASIA_H
#define PASIA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum {
  PASIA_STATUS_OK = 0,
  PASIA_STATUS_NULL_ARGUMENT = 1,
  PASIA_STATUS_INVALID_UTF8 = 2,
  PASIA_STATUS_USAGE = 3,
  PASIA_STATUS_IO = 4,
  PASIA_STATUS_PARSE = 5,
  PASIA_STATUS_INTEGRITY = 6,
  PASIA_STATUS_FORMAT = 7,
  PASIA_STATUS_NUMERICAL = 8,
  PASIA_STATUS_DIMENSION = 9,
  PASIA_STATUS_OUT_OF_RANGE = 10,
  PASIA_STATUS_BUFFER_TOO_SMALL = 11,
  PASIA_STATUS_PANIC = 12,
} PasiaStatus;

/**
 * Parsed sentences.
 */
typedef struct PasiaCorpus PasiaCorpus;

/**
 * A trained model loaded from a model directory.
 */
typedef struct PasiaModel PasiaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses corpus text. On success `*out` owns a new corpus.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
PasiaStatus pasia_corpus_parse(const char *text, PasiaCorpus **out);

/**
 * # Safety
 * `corpus` must come from [`pasia_corpus_parse`] and not be used afterwards.
 */
void pasia_corpus_free(PasiaCorpus *corpus);

/**
 * Number of sentences, 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live corpus handle.
 */
uintptr_t pasia_corpus_len(const PasiaCorpus *corpus);

/**
 * Token and predicate counts of one sentence.
 *
 * # Safety
 * `corpus` must be a live corpus handle; the out pointers must be valid.
 */
PasiaStatus pasia_corpus_sentence_shape(const PasiaCorpus *corpus,
                                        uintptr_t index,
                                        uintptr_t *tokens,
                                        uintptr_t *predicates);

/**
 * Loads a model directory written by `pasia train`.
 *
 * # Safety
 * `dir` must be a NUL-terminated path and `out` a valid pointer.
 */
PasiaStatus pasia_model_load(const char *dir, PasiaModel **out);

/**
 * # Safety
 * `model` must come from [`pasia_model_load`] and not be used afterwards.
 */
void pasia_model_free(PasiaModel *model);

/**
 * Label distributions for one sentence, laid out as
 * `[predicate][token][NOM, ACC, DAT, NONE]`. `*len` always receives the
 * required length; if `buf` is null or `cap` is smaller, nothing is written
 * and `PASIA_STATUS_BUFFER_TOO_SMALL` is returned. Sentences without
 * predicates need no buffer.
 *
 * # Safety
 * Handles must be live; `buf` must hold `cap` doubles; `len` must be valid.
 */
PasiaStatus pasia_model_label_probabilities(const PasiaModel *model,
                                            const PasiaCorpus *corpus,
                                            uintptr_t index,
                                            double *buf,
                                            uintptr_t cap,
                                            uintptr_t *len);

/**
 * Decodes every sentence with the model's tuned thresholds. `*out`
 * receives prediction lines `<sent_id> <pred> <label> <token|-> <prob>`
 * (1-based) to be released with [`pasia_string_free`].
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
PasiaStatus pasia_model_predict(const PasiaModel *model, const PasiaCorpus *corpus, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void pasia_string_free(char *s);

/**
 * One-sided permutation test that `mean(a) > mean(b)`.
 *
 * # Safety
 * `a` and `b` must hold `a_len` and `b_len` doubles; `p_value` must be valid.
 */
PasiaStatus pasia_permutation_test(const double *a,
                                   uintptr_t a_len,
                                   const double *b,
                                   uintptr_t b_len,
                                   double *p_value);

/**
 * Message of the last failed call on this thread, empty after success.
 * Valid until the next call into the library.
 */
const char *pasia_last_error(void);

/**
 * Library version as a static string.
 */
const char *pasia_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PASIA_H */
