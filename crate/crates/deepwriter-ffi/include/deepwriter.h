#ifndef DEEPWRITER_H
#define DEEPWRITER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum DwStatus {
  DwOk = 0,
  /**
   * Null pointer, non-UTF-8 string, or otherwise unusable argument.
   */
  DwInvalidArgument = 1,
  DwIoError = 2,
  /**
   * Malformed or corrupted checkpoint/image file.
   */
  DwFormatError = 3,
  /**
   * Input violates a documented precondition (bad dims, empty data, ...).
   */
  DwDomainError = 4,
  DwInternalError = 5,
} DwStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct DwModel DwModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint file into a model handle. On success `*out` owns the
 * model; release it with `dw_model_free`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum DwStatus dw_model_load(const char *path, struct DwModel **out);

/**
 * Releases a model handle. A null pointer is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer obtained from `dw_model_load`, not yet
 * freed.
 */
void dw_model_free(struct DwModel *model);

/**
 * Number of enrolled writers (classes) in the model; 0 if `model` is null.
 *
 * # Safety
 * `model` must be null or a live handle from `dw_model_load`.
 */
uint32_t dw_model_num_classes(const struct DwModel *model);

/**
 * Identifies the writer of the image file at `image_path`. `sample_ratio` is
 * the fraction of scanned patches scored (e.g. 0.1). On success writes the
 * class index to `out_writer` and its probability to `out_confidence`; if
 * `label_buf` is non-null, also copies the writer label (NUL-terminated,
 * truncated to `label_cap` bytes including the NUL).
 *
 * # Safety
 * `model` must be a live handle; `image_path` a valid NUL-terminated string;
 * `out_writer`/`out_confidence` valid pointers; `label_buf` null or valid
 * for `label_cap` bytes.
 */
enum DwStatus dw_identify_file(const struct DwModel *model,
                               const char *image_path,
                               double sample_ratio,
                               uint32_t *out_writer,
                               float *out_confidence,
                               char *label_buf,
                               uintptr_t label_cap);

/**
 * Copies the current thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length in bytes, excluding
 * the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
uintptr_t dw_last_error_message(char *buf, uintptr_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPWRITER_H */
