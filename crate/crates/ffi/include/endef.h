#ifndef ENDEF_H
#define ENDEF_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum EndefStatus {
  ENDEF_STATUS_OK = 0,
  ENDEF_STATUS_NULL_POINTER = 1,
  ENDEF_STATUS_INVALID_UTF8 = 2,
  ENDEF_STATUS_IO = 3,
  ENDEF_STATUS_PARSE = 4,
  ENDEF_STATUS_INVALID_ARGUMENT = 5,
  // A metric needs both classes present.
  ENDEF_STATUS_SINGLE_CLASS = 6,
  // The operation does not apply to this kind of checkpoint.
  ENDEF_STATUS_WRONG_MODEL_KIND = 7,
  ENDEF_STATUS_CHECKPOINT_VERSION = 8,
  // A Rust panic was caught at the boundary.
  ENDEF_STATUS_INTERNAL = 99,
} EndefStatus;

typedef struct EndefGazetteer EndefGazetteer;

// A loaded checkpoint: two-branch or single encoder.
typedef struct EndefModelHandle EndefModelHandle;

// Per-branch probabilities for one piece.
typedef struct EndefCaseReport {
  double p_entity;
  double p_detector;
  double p_fused;
  double p_debiased;
} EndefCaseReport;

typedef struct EndefEvalReport {
  double macf1;
  double acc;
  double auc;
  double spauc;
  double f1_real;
  double f1_fake;
} EndefEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, statically allocated; do not free.
const char *endef_version(void);

// Copy of the last error message on this thread, or NULL when the last
// call succeeded. Free with [`endef_string_free`].
char *endef_last_error_message(void);

// # Safety
// `s` must come from this library and not have been freed. NULL is ignored.
void endef_string_free(char *s);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum EndefStatus endef_model_load(const char *path, struct EndefModelHandle **out);

// # Safety
// `model` must come from [`endef_model_load`] and not have been freed.
void endef_model_free(struct EndefModelHandle *model);

// 1 for a two-branch checkpoint, 0 for a single encoder, -1 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
int32_t endef_model_is_two_branch(const struct EndefModelHandle *model);

// Debiased fake probability for one piece (the plain output for a single
// encoder checkpoint). Entity strings may span several tokens.
//
// # Safety
// `model` must be live; `tokens` must hold `n_tokens` strings and
// `entities` `n_entities` strings (may be NULL when the count is 0).
enum EndefStatus endef_model_predict(const struct EndefModelHandle *model,
                                     const char *const *tokens,
                                     size_t n_tokens,
                                     const char *const *entities,
                                     size_t n_entities,
                                     double *out);

// # Safety
// As [`endef_model_predict`]; `out` must be writable.
enum EndefStatus endef_model_case_report(const struct EndefModelHandle *model,
                                         const char *const *tokens,
                                         size_t n_tokens,
                                         const char *const *entities,
                                         size_t n_entities,
                                         struct EndefCaseReport *out);

// Labels are 0 (real) or 1 (fake).
//
// # Safety
// `scores` and `labels` must each hold `n` elements; `out` writable.
enum EndefStatus endef_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Standardized partial AUC over false-positive rates up to `maxfpr`.
//
// # Safety
// As [`endef_roc_auc`].
enum EndefStatus endef_sp_auc(const double *scores,
                              const uint8_t *labels,
                              size_t n,
                              double maxfpr,
                              double *out);

// # Safety
// As [`endef_roc_auc`].
enum EndefStatus endef_evaluate(const double *scores,
                                const uint8_t *labels,
                                size_t n,
                                double threshold,
                                double maxfpr,
                                struct EndefEvalReport *out);

// Loads one entity per line (first tab-separated column).
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum EndefStatus endef_gazetteer_load(const char *path,
                                      bool case_sensitive,
                                      struct EndefGazetteer **out);

// # Safety
// `entries` must hold `n` strings and `out` be writable.
enum EndefStatus endef_gazetteer_new(const char *const *entries,
                                     size_t n,
                                     bool case_sensitive,
                                     struct EndefGazetteer **out);

// # Safety
// `g` must come from this library and not have been freed.
void endef_gazetteer_free(struct EndefGazetteer *g);

// Recognized entities as a JSON array of strings, in order of occurrence.
// Free the result with [`endef_string_free`].
//
// # Safety
// `g` must be live, `tokens` hold `n_tokens` strings, `out_json` writable.
enum EndefStatus endef_gazetteer_recognize(const struct EndefGazetteer *g,
                                           const char *const *tokens,
                                           size_t n_tokens,
                                           char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENDEF_H */
