#ifndef OPCD_H
#define OPCD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OpcdStatus {
  OPCD_STATUS_OK = 0,
  OPCD_STATUS_NULL_POINTER = 1,
  OPCD_STATUS_INVALID_ARGUMENT = 2,
  /*
   Output buffer too small; the needed length is still reported.
   */
  OPCD_STATUS_BUFFER_TOO_SMALL = 3,
  OPCD_STATUS_IO = 4,
  OPCD_STATUS_CHECKPOINT = 5,
  OPCD_STATUS_CONFIG = 6,
  OPCD_STATUS_ENVIRONMENT = 7,
  OPCD_STATUS_INTERNAL = 8,
  OPCD_STATUS_PANIC = 9,
} OpcdStatus;

typedef enum OpcdGame {
  OPCD_GAME_FROZEN_LAKE = 0,
  OPCD_GAME_SOKOBAN = 1,
} OpcdGame;

typedef enum OpcdBoardStatus {
  OPCD_BOARD_STATUS_RUNNING = 0,
  OPCD_BOARD_STATUS_WON = 1,
  OPCD_BOARD_STATUS_LOST = 2,
} OpcdBoardStatus;

/*
 A language model with the standard vocabulary.
 */
typedef struct OpcdModel OpcdModel;

/*
 One game board.
 */
typedef struct OpcdWorld OpcdWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the calling thread's last error message (empty after a success).

 # Safety
 `buf` must point to `cap` writable bytes; `needed` may be null.
 */
enum OpcdStatus opcd_last_error_message(char *buf, size_t cap, size_t *needed);

/*
 A freshly initialized model.

 # Safety
 `out` must be a valid pointer to write the handle to.
 */
enum OpcdStatus opcd_model_init(size_t layers,
                                size_t embed_dim,
                                size_t heads,
                                size_t max_seq,
                                uint64_t seed,
                                struct OpcdModel **out);

/*
 # Safety
 `path` must be NUL-terminated; `out` must be valid for writes.
 */
enum OpcdStatus opcd_model_load(const char *path, struct OpcdModel **out);

/*
 # Safety
 `model` must come from this library; `path` must be NUL-terminated.
 */
enum OpcdStatus opcd_model_save(const struct OpcdModel *model, const char *path);

/*
 # Safety
 `model` must come from this library and not be used afterwards.
 */
void opcd_model_free(struct OpcdModel *model);

/*
 # Safety
 `model` must come from this library; `out` must be valid for writes.
 */
enum OpcdStatus opcd_model_vocab_size(const struct OpcdModel *model, size_t *out);

/*
 Token ids of `text` under the model's vocabulary.

 # Safety
 `out` must hold `cap` ids; `len` may be null.
 */
enum OpcdStatus opcd_encode(const struct OpcdModel *model,
                            const char *text,
                            uint32_t *out,
                            size_t cap,
                            size_t *len);

/*
 Next-token log-probabilities after `seq` (one per vocabulary entry).

 # Safety
 `seq` must hold `seq_len` ids and `out` `cap` doubles.
 */
enum OpcdStatus opcd_next_logprobs(const struct OpcdModel *model,
                                   const uint32_t *seq,
                                   size_t seq_len,
                                   double *out,
                                   size_t cap);

/*
 Samples up to `max_tokens` after `prefix`, stopping after end of
 sequence. Temperature 0 is greedy.

 # Safety
 `prefix` must hold `prefix_len` ids, `out` `cap` ids; `len` may be null.
 */
enum OpcdStatus opcd_sample(const struct OpcdModel *model,
                            const uint32_t *prefix,
                            size_t prefix_len,
                            size_t max_tokens,
                            double temperature,
                            uint64_t seed,
                            uint32_t *out,
                            size_t cap,
                            size_t *len);

/*
 Per-token reverse KL between two log-probability rows of length `v`,
 summed over the student's top `k` tokens.

 # Safety
 `student` and `teacher` must hold `v` doubles; `out` must be valid.
 */
enum OpcdStatus opcd_reverse_kl_token(const double *student,
                                      const double *teacher,
                                      size_t v,
                                      size_t k,
                                      bool renormalize,
                                      double *out);

/*
 A board from `seed` with default settings.

 # Safety
 `out` must be valid for writes.
 */
enum OpcdStatus opcd_world_reset(enum OpcdGame game, uint64_t seed, struct OpcdWorld **out);

/*
 Applies a move (`0` up, `1` down, `2` left, `3` right) and reports the
 new status.

 # Safety
 `world` must come from this library; `status` may be null.
 */
enum OpcdStatus opcd_world_step(struct OpcdWorld *world,
                                uint32_t action,
                                enum OpcdBoardStatus *status);

/*
 The board as text, NUL-terminated.

 # Safety
 `buf` must hold `cap` bytes; `needed` may be null.
 */
enum OpcdStatus opcd_world_render(const struct OpcdWorld *world,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

/*
 # Safety
 `world` must come from this library and not be used afterwards.
 */
void opcd_world_free(struct OpcdWorld *world);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPCD_H */
