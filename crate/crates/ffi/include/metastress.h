#ifndef METASTRESS_H
#define METASTRESS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all functions.
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  MS_STATUS_NULL_POINTER = 1,
  MS_STATUS_INVALID_UTF8 = 2,
  MS_STATUS_INVALID_CONFIG = 3,
  MS_STATUS_INVALID_ARGUMENT = 4,
  MS_STATUS_RUN_FAILED = 5,
  MS_STATUS_IO = 6,
  MS_STATUS_PANIC = 7,
} MsStatus;

// A trained or loaded meta-model together with the configuration and data
// it is evaluated on.
typedef struct MsModel MsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *ms_last_error(void);

// Library version as a static NUL-terminated string.
const char *ms_version(void);

// Theil index of `n` positive losses.
//
// # Safety
// `losses` must point to `n` readable doubles and `out` to one writable double.
enum MsStatus ms_theil_index(const double *losses, size_t n, double *out);

// The two LSTM-optimizer input features for `value` with sharpness `p`.
//
// # Safety
// `out` must point to two writable doubles.
enum MsStatus ms_preprocess(double value, double p, double *out);

// Meta-trains from a JSON run config. A diverged run returns `RunFailed`
// and leaves `*out_model` null.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out_model` writable.
enum MsStatus ms_train(const char *config_json, struct MsModel **out_model);

// Meta-test accuracy over `num_tasks` tasks (0 uses the config's count).
// Any of the output pointers may be null.
//
// # Safety
// `model` must be a live handle; non-null outputs must be writable.
enum MsStatus ms_model_evaluate(const struct MsModel *model,
                                size_t num_tasks,
                                double *mean,
                                double *ci95,
                                double *ci999);

// Training record as JSON (or `null` for loaded models). Free with
// [`ms_string_free`].
//
// # Safety
// `model` must be a live handle and `out` writable.
enum MsStatus ms_model_record_json(const struct MsModel *model, char **out);

// Writes a checkpoint.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum MsStatus ms_model_save(const struct MsModel *model, const char *path);

// Loads a checkpoint and pairs it with the data described by `config_json`.
//
// # Safety
// `path` and `config_json` must be NUL-terminated strings; `out_model`
// must be writable.
enum MsStatus ms_model_load(const char *path, const char *config_json, struct MsModel **out_model);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void ms_model_free(struct MsModel *model);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void ms_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* METASTRESS_H */
