#ifndef ICR_H
#define ICR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

#define ICR_OK 0

#define ICR_ERR_NULL_POINTER 1

#define ICR_ERR_INVALID_ARGUMENT 2

#define ICR_ERR_IO 3

#define ICR_ERR_PARSE 4

#define ICR_ERR_INCOMPATIBLE 5

#define ICR_ERR_UNKNOWN_TARGET 6

#define ICR_ERR_INVALID_FEEDBACK 7

/**
 * The session has used all its rounds or asked every object.
 */
#define ICR_ERR_FINISHED 8

#define ICR_ERR_BUFFER_TOO_SMALL 9

/**
 * The target rank was requested from a session without a target.
 */
#define ICR_ERR_NO_TARGET 10

#define ICR_ERR_INTERNAL 99

#define ICR_RANKER_SSCAN 0

#define ICR_RANKER_TCMPL 1

#define ICR_POLICY_LEARNED 0

#define ICR_POLICY_RANDOM 1

#define ICR_POLICY_QASIM 2

#define ICR_POLICY_QACOHE 3

/**
 * A loaded gallery.
 */
typedef struct IcrDataset IcrDataset;

/**
 * A trained candidate policy.
 */
typedef struct IcrPolicy IcrPolicy;

/**
 * One interactive retrieval session.
 */
typedef struct IcrSession IcrSession;

/**
 * Parameters for [`icr_dataset_generate`].
 */
typedef struct IcrSyntheticConfig {
  size_t n_images;
  size_t vocab_size;
  size_t dim;
  size_t regions_per_image;
  size_t min_objects;
  size_t max_objects;
  size_t captions_per_image;
  double noise_sigma;
  uint64_t seed;
} IcrSyntheticConfig;

/**
 * Options for [`icr_session_new`].
 */
typedef struct IcrSessionOptions {
  /**
   * One of the `ICR_POLICY_*` constants.
   */
  int32_t policy_kind;
  /**
   * One of the `ICR_RANKER_*` constants.
   */
  int32_t ranker;
  size_t n_candidates;
  size_t max_rounds;
  /**
   * Seeds the draws of the random and co-occurrence baselines.
   */
  uint64_t seed;
} IcrSessionOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * # Safety
 * `buf` must be valid for `buf_len` bytes; `needed` may be null.
 */
int32_t icr_last_error_message(char *buf, size_t buf_len, size_t *needed);

/**
 * Loads a gallery JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t icr_dataset_load(const char *path, struct IcrDataset **out);

/**
 * Fills `config` with the benchmark gallery parameters.
 *
 * # Safety
 * `config` must be a valid pointer.
 */
int32_t icr_synthetic_config_default(struct IcrSyntheticConfig *config);

/**
 * Generates a synthetic gallery in memory.
 *
 * # Safety
 * `config` and `out` must be valid pointers.
 */
int32_t icr_dataset_generate(const struct IcrSyntheticConfig *config, struct IcrDataset **out);

/**
 * Number of images, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t icr_dataset_num_images(const struct IcrDataset *dataset);

/**
 * Number of object words, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t icr_dataset_vocab_size(const struct IcrDataset *dataset);

/**
 * Id of the image at `position`.
 *
 * # Safety
 * `dataset` must be a live handle, `buf` valid for `buf_len` bytes and
 * `needed` null or valid.
 */
int32_t icr_dataset_image_id(const struct IcrDataset *dataset,
                             size_t position,
                             char *buf,
                             size_t buf_len,
                             size_t *needed);

/**
 * Object word with index `object`.
 *
 * # Safety
 * As for [`icr_dataset_image_id`].
 */
int32_t icr_dataset_word(const struct IcrDataset *dataset,
                         size_t object,
                         char *buf,
                         size_t buf_len,
                         size_t *needed);

/**
 * # Safety
 * `dataset` must be null or a handle not freed before.
 */
void icr_dataset_free(struct IcrDataset *dataset);

/**
 * Loads a policy JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t icr_policy_load(const char *path, struct IcrPolicy **out);

/**
 * # Safety
 * `policy` must be null or a handle not freed before.
 */
void icr_policy_free(struct IcrPolicy *policy);

/**
 * Fills `options` with the defaults: learned policy, sscan, 10 candidates,
 * 10 rounds, seed 0.
 *
 * # Safety
 * `options` must be a valid pointer.
 */
int32_t icr_session_options_default(struct IcrSessionOptions *options);

/**
 * Starts a session from `n_queries` initial descriptions and proposes the
 * first candidates. `policy` is required for `ICR_POLICY_LEARNED` and ignored
 * otherwise. `target_id` may be null; when set, [`icr_session_target_rank`]
 * reports that image's rank.
 *
 * # Safety
 * Handles must be live, `queries` must hold `n_queries` NUL-terminated
 * strings, `options` and `out` must be valid and `target_id` null or a
 * NUL-terminated string.
 */
int32_t icr_session_new(const struct IcrDataset *dataset,
                        const struct IcrPolicy *policy,
                        const char *const *queries,
                        size_t n_queries,
                        const char *target_id,
                        const struct IcrSessionOptions *options,
                        struct IcrSession **out);

/**
 * Object indices awaiting confirmation; empty once the session is finished.
 *
 * # Safety
 * `session` must be live, `objects` valid for `capacity` elements and
 * `out_len` valid.
 */
int32_t icr_session_candidates(const struct IcrSession *session,
                               size_t *objects,
                               size_t capacity,
                               size_t *out_len);

/**
 * Answers the pending candidates and proposes the next ones. Candidates in
 * neither list count as skipped and may be proposed again.
 *
 * # Safety
 * `session` must be live; `positive` and `negative` must hold `n_positive`
 * and `n_negative` elements.
 */
int32_t icr_session_confirm(struct IcrSession *session,
                            const size_t *positive,
                            size_t n_positive,
                            const size_t *negative,
                            size_t n_negative);

/**
 * Completed rounds, or 0 for a null handle.
 *
 * # Safety
 * `session` must be null or live.
 */
size_t icr_session_round(const struct IcrSession *session);

/**
 * 1-based rank of the session target.
 *
 * # Safety
 * `session` must be live and `rank` valid.
 */
int32_t icr_session_target_rank(const struct IcrSession *session, size_t *rank);

/**
 * Gallery positions and scores of the best `k` images, best first. Fewer
 * are written when the gallery is smaller; `out_len` gets the count.
 *
 * # Safety
 * `session` must be live, `positions` and `scores` valid for `k` elements
 * (`scores` may be null) and `out_len` valid.
 */
int32_t icr_session_top(const struct IcrSession *session,
                        size_t k,
                        size_t *positions,
                        double *scores,
                        size_t *out_len);

/**
 * # Safety
 * `session` must be null or a handle not freed before.
 */
void icr_session_free(struct IcrSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICR_H */
