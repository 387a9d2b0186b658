#ifndef RIR_H
#define RIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum RirStatus {
  RIR_STATUS_OK = 0,
  RIR_STATUS_NULL_POINTER = 1,
  RIR_STATUS_INVALID_UTF8 = 2,
  RIR_STATUS_INVALID_ARGUMENT = 3,
  RIR_STATUS_PARSE_ERROR = 4,
  RIR_STATUS_IO_ERROR = 5,
  RIR_STATUS_BUFFER_TOO_SMALL = 6,
  RIR_STATUS_INTERNAL_ERROR = 7,
} RirStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct RirModel RirModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf`
 * (NUL-terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (length query).
 */
size_t rir_last_error(char *buf, size_t cap);

/**
 * Builds a model with fresh seeded parameters from `key = value` config
 * text (may be empty for defaults). Returns null on failure; see
 * [`rir_last_error`].
 *
 * # Safety
 * `config_text` must be null or a NUL-terminated UTF-8 string.
 */
struct RirModel *rir_model_new(const char *config_text);

/**
 * Loads a model from a checkpoint file. Returns null on failure.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
struct RirModel *rir_model_load(const char *path);

/**
 * Releases a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must be a pointer from [`rir_model_new`] / [`rir_model_load`]
 * that has not been freed already.
 */
void rir_model_free(struct RirModel *model);

/**
 * Hidden width `d` of the model's sentence vectors, or -1 on null input.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
int32_t rir_model_hidden_width(const struct RirModel *model);

/**
 * Encodes a token-id sequence into a sentence vector of `d` doubles.
 *
 * # Safety
 * `ids` must point to `ids_len` u32 values; `out` must point to `out_cap`
 * writable doubles; `model` must be a live handle.
 */
enum RirStatus rir_model_encode(const struct RirModel *model,
                                const uint32_t *ids,
                                size_t ids_len,
                                double *out,
                                size_t out_cap);

/**
 * Classifies a whitespace-tokenized expression; writes the argmax class.
 *
 * # Safety
 * `expr` must be a NUL-terminated UTF-8 string, `out_label` a writable i32,
 * `model` a live handle.
 */
enum RirStatus rir_model_classify(const struct RirModel *model,
                                  const char *expr,
                                  int32_t *out_label);

/**
 * Writes the induced bracketed parse of an expression into `out`
 * (NUL-terminated). `written` receives the full length (excluding NUL);
 * when it exceeds `cap - 1` the status is `BufferTooSmall`.
 *
 * # Safety
 * `expr` must be a NUL-terminated UTF-8 string; `out` must point to `cap`
 * writable bytes; `written` may be null; `model` must be a live handle.
 */
enum RirStatus rir_model_parse(const struct RirModel *model,
                               const char *expr,
                               char *out,
                               size_t cap,
                               size_t *written);

/**
 * Evaluates a ListOps expression exactly (the task oracle).
 *
 * # Safety
 * `expr` must be a NUL-terminated UTF-8 string; `out_value` a writable i32.
 */
enum RirStatus rir_listops_eval(const char *expr, int32_t *out_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RIR_H */
