#ifndef OVMM_H
#define OVMM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OvmmStatus {
  OVMM_STATUS_OK = 0,
  OVMM_STATUS_NULL_POINTER = 1,
  OVMM_STATUS_INVALID_ARGUMENT = 2,
  OVMM_STATUS_PARSE = 3,
  OVMM_STATUS_BUFFER_TOO_SMALL = 4,
  OVMM_STATUS_NO_OBSERVATION = 5,
  OVMM_STATUS_INTERNAL = 6,
} OvmmStatus;

/**
 * Simulator instance for one episode.
 */
typedef struct OvmmSim OvmmSim;

/**
 * Per-step result flags.
 */
typedef struct OvmmStepInfo {
  bool collided;
  bool invalid_action;
  bool stop;
  bool holding;
  bool target_on_goal;
  bool arm_collision;
} OvmmStepInfo;

/**
 * Stage outcome of a complete episode.
 */
typedef struct OvmmEpisodeSummary {
  bool find_obj;
  bool pick;
  bool find_rec;
  bool place;
  double partial;
  uint32_t total_steps;
} OvmmEpisodeSummary;

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ovmm_last_error(void);

/**
 * Number of hand-authored fixture episodes.
 */
size_t ovmm_fixture_count(void);

/**
 * Creates a simulator for fixture `index`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum OvmmStatus ovmm_sim_new_fixture(size_t index, uint64_t seed, bool noisy, struct OvmmSim **out);

/**
 * Creates a simulator from scene and episode JSON documents.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum OvmmStatus ovmm_sim_new_json(const char *scene_json,
                                  const char *episode_json,
                                  uint64_t seed,
                                  bool noisy,
                                  struct OvmmSim **out);

/**
 * Releases a simulator. Null is ignored.
 *
 * # Safety
 * `sim` must come from an `ovmm_sim_new_*` call and not be used afterwards.
 */
void ovmm_sim_free(struct OvmmSim *sim);

/**
 * Camera image dimensions.
 *
 * # Safety
 * All pointers must be valid.
 */
enum OvmmStatus ovmm_sim_image_size(const struct OvmmSim *sim, size_t *width, size_t *height);

/**
 * Renders the current observation into caller buffers of `pixels` entries
 * each (row-major) and writes the base pose `[x, y, yaw]` relative to the
 * start. Any buffer may be null to skip it.
 *
 * # Safety
 * Non-null buffers must hold `pixels` elements (`pose`: 3).
 */
enum OvmmStatus ovmm_sim_observe(struct OvmmSim *sim,
                                 float *depth,
                                 uint16_t *semantic,
                                 size_t pixels,
                                 double *pose);

/**
 * Category perceived for `instance` in the last observation, copied as a
 * NUL-terminated string into `buf`. Writes an empty string when the id is
 * absent.
 *
 * # Safety
 * `buf` must hold `len` bytes.
 */
enum OvmmStatus ovmm_sim_label(const struct OvmmSim *sim, uint16_t instance, char *buf, size_t len);

/**
 * Applies one action given as JSON (e.g. `{"type":"grasp"}`). Invalid
 * actions still consume a step and set `invalid_action`.
 *
 * # Safety
 * `action_json` must be NUL-terminated; `info` may be null.
 */
enum OvmmStatus ovmm_sim_step_json(struct OvmmSim *sim,
                                   const char *action_json,
                                   struct OvmmStepInfo *info);

/**
 * Runs the builtin heuristic agent on fixture `index` to completion.
 *
 * # Safety
 * `out` must be valid.
 */
enum OvmmStatus ovmm_run_fixture(size_t index,
                                 uint64_t seed,
                                 bool noisy,
                                 struct OvmmEpisodeSummary *out);

/**
 * Geodesic distance field on a `rows × cols` grid (nonzero = traversable)
 * from one goal cell, with cell size `h`. Unreachable cells get +infinity.
 *
 * # Safety
 * `traversable` and `out` must hold `rows * cols` elements.
 */
enum OvmmStatus ovmm_fmm_distance(const uint8_t *traversable,
                                  size_t rows,
                                  size_t cols,
                                  size_t goal_row,
                                  size_t goal_col,
                                  double h,
                                  double *out);

#endif  /* OVMM_H */
