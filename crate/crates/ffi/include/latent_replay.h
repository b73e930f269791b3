#ifndef LATENT_REPLAY_H
#define LATENT_REPLAY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum LrStatus {
  LR_STATUS_OK = 0,
  LR_STATUS_NULL_ARGUMENT = 1,
  LR_STATUS_INVALID_UTF8 = 2,
  LR_STATUS_IO = 3,
  LR_STATUS_CONFIG = 4,
  LR_STATUS_CONTRACT = 5,
  LR_STATUS_NUMERIC = 6,
  LR_STATUS_PANIC = 7,
} LrStatus;

typedef enum LrMetric {
  LR_METRIC_EXACT_MATCH = 0,
  LR_METRIC_NORMALIZED_F1 = 1,
} LrMetric;

/**
 * A loaded checkpoint with its vocabulary.
 */
typedef struct LrModel LrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lr_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void lr_string_free(char *s);

/**
 * Loads a checkpoint and its vocabulary file into `*out`.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum LrStatus lr_model_load(const char *checkpoint_path,
                            const char *vocab_path,
                            struct LrModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`lr_model_load`] and not have been freed.
 */
void lr_model_free(struct LrModel *model);

/**
 * Latent dimension of the loaded prior, or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t lr_model_latent_dim(const struct LrModel *model);

/**
 * Draws up to `n` replay QA pairs; writes them as JSON Lines to `*out_jsonl`
 * and the number produced to `*out_count`.
 *
 * # Safety
 * `model` must be a live handle; output pointers must be writable.
 */
enum LrStatus lr_model_sample(const struct LrModel *model,
                              uintptr_t n,
                              uint64_t seed_value,
                              uintptr_t k_steps,
                              double step_size,
                              uintptr_t max_len,
                              char **out_jsonl,
                              uintptr_t *out_count);

/**
 * Predicted answer text for `context` and `prompt`.
 *
 * # Safety
 * `model` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum LrStatus lr_model_predict(const struct LrModel *model,
                               const char *context,
                               const char *prompt,
                               char **out_answer);

/**
 * Total slot energy of `answer` for `context` and `prompt`.
 *
 * # Safety
 * `model` must be a live handle; strings NUL-terminated; `out` writable.
 */
enum LrStatus lr_model_energy(const struct LrModel *model,
                              const char *context,
                              const char *prompt,
                              const char *answer,
                              double *out_energy);

/**
 * Scores whitespace-tokenized `prediction` against `gold` on a 0-100 scale.
 *
 * # Safety
 * Strings NUL-terminated; `out` writable.
 */
enum LrStatus lr_metric(enum LrMetric metric,
                        const char *prediction,
                        const char *gold,
                        double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENT_REPLAY_H */
