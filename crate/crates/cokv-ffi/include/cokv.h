#ifndef COKV_H
#define COKV_H

/* Generated by cbindgen from cokv-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call in this ABI.
typedef enum CokvStatus {
  COKV_STATUS_OK = 0,
  COKV_STATUS_NULL_POINTER = 1,
  COKV_STATUS_INVALID_ARGUMENT = 2,
  COKV_STATUS_GAME_ERROR = 3,
  COKV_STATUS_ESTIMATE_ERROR = 4,
  COKV_STATUS_ALLOCATION_ERROR = 5,
  COKV_STATUS_EVICTION_ERROR = 6,
  COKV_STATUS_CALLBACK_ERROR = 7,
  COKV_STATUS_PANIC = 8,
} CokvStatus;

// Opaque handle to a utility oracle.
typedef struct CokvGame CokvGame;

// Utility callback: receives the member indices of the coalition S and
// writes U(S) to `out_utility`, returning 0 on success. Must be pure in the
// coalition and safe to call from multiple threads when estimating with
// more than one worker.
typedef int32_t (*CokvUtilityCallback)(void *ctx,
                                       const size_t *members,
                                       size_t member_count,
                                       double *out_utility);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on the same thread.
const char *cokv_last_error(void);

// Build a game from a spec JSON document
// `{"family": "...", "n": ..., "params": {...}}` (built-in families only).
//
// # Safety
// `spec_json` must be a NUL-terminated UTF-8 string; `out_game` must be a
// valid pointer. On `Ok` the handle must be freed with [`cokv_game_free`].
enum CokvStatus cokv_game_from_json(const char *spec_json, struct CokvGame **out_game);

// Build a game whose utilities come from a caller-supplied callback.
//
// # Safety
// `callback` and `ctx` must satisfy the [`CokvUtilityCallback`] contract
// for the lifetime of the handle; `out_game` must be valid.
enum CokvStatus cokv_game_from_callback(size_t n,
                                        double u_min,
                                        double u_max,
                                        CokvUtilityCallback callback,
                                        void *ctx,
                                        struct CokvGame **out_game);

// Free a game handle. Null is a no-op.
//
// # Safety
// `game` must be a handle from a `cokv_game_*` constructor, not yet freed.
void cokv_game_free(struct CokvGame *game);

// Number of players in the game; 0 if `game` is null.
//
// # Safety
// `game` must be a live handle or null.
size_t cokv_game_player_count(const struct CokvGame *game);

// U(S) for the coalition listing `member_count` player indices.
//
// # Safety
// `members` must point to `member_count` indices; `out_utility` must be
// valid.
enum CokvStatus cokv_game_utility(const struct CokvGame *game,
                                  const size_t *members,
                                  size_t member_count,
                                  double *out_utility);

// Exact Shapley values by full enumeration (n ≤ 20). `out_values` must hold
// `n` doubles.
//
// # Safety
// `game` must be live; `out_values` must hold `player_count` doubles.
enum CokvStatus cokv_exact_shapley(const struct CokvGame *game, double *out_values);

// Exact sliced Shapley values over the given coalition sizes (n ≤ 20).
// `out_values` must hold `n` doubles.
//
// # Safety
// As [`cokv_exact_shapley`], plus `slices` must hold `slice_count` sizes.
enum CokvStatus cokv_exact_ssv(const struct CokvGame *game,
                               const size_t *slices,
                               size_t slice_count,
                               double *out_values);

// Monte-Carlo sliced Shapley estimate: `samples` draws with round-robin
// slice scheduling, seeded, split over `workers` threads. `out_values`
// must hold `n` doubles; `out_evaluations` (optional) receives the oracle
// evaluation count.
//
// # Safety
// As [`cokv_exact_ssv`]; with `workers > 1` a callback-backed game must be
// thread-safe.
enum CokvStatus cokv_estimate_ssv(const struct CokvGame *game,
                                  const size_t *slices,
                                  size_t slice_count,
                                  uint64_t samples,
                                  uint64_t seed,
                                  size_t workers,
                                  double *out_values,
                                  uint64_t *out_evaluations);

// Hoeffding-style sample budget for an (ε, δ)-approximation of every
// player's sliced value over `h_size` slices with the given utility range.
//
// # Safety
// `out_samples` must be valid.
enum CokvStatus cokv_required_samples(double epsilon,
                                      double delta,
                                      size_t h_size,
                                      size_t n,
                                      double utility_range,
                                      uint64_t *out_samples);

// α-truncated min-max normalization of `n` scores into `out_normalized`
// (also `n` doubles).
//
// # Safety
// `scores` and `out_normalized` must each hold `n` doubles.
enum CokvStatus cokv_normalize_scores(const double *scores,
                                      size_t n,
                                      size_t alpha,
                                      double *out_normalized);

// Largest-remainder budget split: `out_cache_sizes[i]` = window + share of
// `budget`, conserving the budget exactly.
//
// # Safety
// `normalized` and `out_cache_sizes` must each hold `n` entries.
enum CokvStatus cokv_allocate(const double *normalized,
                              size_t n,
                              uint64_t budget,
                              uint64_t window,
                              uint64_t *out_cache_sizes);

// Pooled attention scores of the window queries against the prefix keys:
// row-softmax(q·kᵀ/√d), per-row max-pool (odd `kernel`, length-preserving),
// mean over rows. `q_win` is `window_len × head_dim` row-major, `k_out` is
// `prefix_len × head_dim`, `out_scores` holds `prefix_len` doubles.
//
// # Safety
// The buffers must match the stated shapes.
enum CokvStatus cokv_pooled_scores(const float *q_win,
                                   size_t window_len,
                                   const float *k_out,
                                   size_t prefix_len,
                                   size_t head_dim,
                                   size_t kernel,
                                   double *out_scores);

// Prefix positions retained under a total cache budget (window included):
// the top `budget − window_len` positions by pooled score, ties to the
// lower index, written ascending to `out_indices` (capacity `prefix_len`);
// `out_count` receives how many were written.
//
// # Safety
// As [`cokv_pooled_scores`]; `out_indices` must hold `prefix_len` entries.
enum CokvStatus cokv_evict_indices(const float *q_win,
                                   size_t window_len,
                                   const float *k_out,
                                   size_t prefix_len,
                                   size_t head_dim,
                                   size_t kernel,
                                   uint64_t budget,
                                   size_t *out_indices,
                                   size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COKV_H */
