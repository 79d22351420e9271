#ifndef DRAE_H
#define DRAE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `Ok` is zero.
 */
typedef enum DraeStatus {
  DRAE_STATUS_OK = 0,
  DRAE_STATUS_NULL_POINTER = 1,
  DRAE_STATUS_INVALID_ARGUMENT = 2,
  DRAE_STATUS_DIMENSION = 3,
  DRAE_STATUS_CONFIG = 4,
  DRAE_STATUS_NUMERIC = 5,
  DRAE_STATUS_STATE = 6,
  DRAE_STATUS_IO = 7,
  DRAE_STATUS_FORMAT = 8,
  DRAE_STATUS_PANIC = 9,
} DraeStatus;

typedef enum DraeHead {
  DRAE_HEAD_ADVERSARY = 0,
  DRAE_HEAD_NUISANCE = 1,
} DraeHead;

/**
 * Model bundle: encoder, decoder, discriminator heads and task classifier.
 */
typedef struct DraeModel DraeModel;

/**
 * Latent dropout schedule.
 */
typedef struct DraeSchedule DraeSchedule;

/**
 * Training knobs. Fill with [`drae_train_options_default`] first.
 */
typedef struct DraeTrainOptions {
  double lambda_a;
  double lambda_n;
  size_t epochs;
  size_t batch_size;
  size_t classifier_epochs;
  double learning_rate;
  uint64_t seed;
} DraeTrainOptions;

typedef struct DraeDims {
  size_t channels;
  size_t latent;
  size_t subjects;
  size_t classes;
} DraeDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *drae_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *drae_version(void);

struct DraeTrainOptions drae_train_options_default(void);

/**
 * Soft schedule over `dim` nodes with exponent `alpha`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DraeStatus drae_schedule_soft(size_t dim, double alpha, struct DraeSchedule **out);

/**
 * Hard split of `dim` nodes in the ratio `adversary:nuisance`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DraeStatus drae_schedule_hard(size_t dim,
                                   uint32_t adversary,
                                   uint32_t nuisance,
                                   struct DraeSchedule **out);

/**
 * # Safety
 * `schedule` must be null or a handle from a `drae_schedule_*` constructor.
 */
void drae_schedule_free(struct DraeSchedule *schedule);

/**
 * Expected number of nodes a head sees.
 *
 * # Safety
 * `schedule` must be a live handle and `out` writable.
 */
enum DraeStatus drae_schedule_effective_dim(const struct DraeSchedule *schedule,
                                            enum DraeHead head,
                                            double *out);

/**
 * Per-node drop rates for `head`; `out` must hold exactly `len` = dim values.
 *
 * # Safety
 * `schedule` must be a live handle and `out` valid for `len` writes.
 */
enum DraeStatus drae_schedule_drop_rates(const struct DraeSchedule *schedule,
                                         enum DraeHead head,
                                         double *out,
                                         size_t len);

/**
 * Builds a freshly initialised model. `variant` is a tag such as `"DA-cRAE"`.
 *
 * # Safety
 * `variant` must be a NUL-terminated string and `out` writable.
 */
enum DraeStatus drae_model_new(const char *variant,
                               struct DraeDims dims,
                               double alpha,
                               uint64_t seed,
                               struct DraeModel **out);

/**
 * # Safety
 * `model` must be null or a handle from `drae_model_new`/`drae_model_load`.
 */
void drae_model_free(struct DraeModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum DraeStatus drae_model_dims(const struct DraeModel *model, struct DraeDims *out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum DraeStatus drae_model_save(const struct DraeModel *model, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum DraeStatus drae_model_load(const char *path, struct DraeModel **out);

/**
 * Encodes `rows` x channels inputs into `out` (rows x latent, `out_len` values).
 *
 * # Safety
 * `x` must hold `rows * cols` values and `out` must be valid for `out_len` writes.
 */
enum DraeStatus drae_model_encode(const struct DraeModel *model,
                                  const double *x,
                                  size_t rows,
                                  size_t cols,
                                  double *out,
                                  size_t out_len);

/**
 * Trains the feature extractor, then the MLP task classifier on the frozen
 * encoder. Inputs have `model` channels columns. `options` may be null for
 * defaults. When `final_loss` is non-null it receives the last epoch's total.
 *
 * # Safety
 * `x` must hold `rows * channels` values; `subjects` and `labels` `rows` each.
 */
enum DraeStatus drae_model_train(struct DraeModel *model,
                                 const double *x,
                                 size_t rows,
                                 const uint32_t *subjects,
                                 const uint32_t *labels,
                                 const struct DraeTrainOptions *options,
                                 double *final_loss);

/**
 * Task-label predictions for `rows` inputs, written to `out` (`rows` values).
 *
 * # Safety
 * `x` must hold `rows * cols` values and `out` must be valid for `rows` writes.
 */
enum DraeStatus drae_model_predict(const struct DraeModel *model,
                                   const double *x,
                                   size_t rows,
                                   size_t cols,
                                   uint32_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRAE_H */
