#ifndef WATERMARK_H
#define WATERMARK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WmStatus {
  WM_STATUS_OK = 0,
  WM_STATUS_NULL_POINTER = 1,
  WM_STATUS_INVALID_ARGUMENT = 2,
  WM_STATUS_DIMENSION_MISMATCH = 3,
  WM_STATUS_UNSTABLE = 4,
  WM_STATUS_SINGULAR = 5,
  WM_STATUS_DEGENERATE_SPECTRUM = 6,
  WM_STATUS_NOT_READY = 7,
  WM_STATUS_SEQUENCING = 8,
  WM_STATUS_NUMERICAL = 9,
  WM_STATUS_IO = 10,
  WM_STATUS_PANIC = 11,
} WmStatus;

// Exact-parameter replay detector.
typedef struct WmDetector WmDetector;

// Online learner with its own watermark noise generator.
typedef struct WmLearner WmLearner;

// Validated plant `x+ = A x + B phi + w`, `y = C x + v`.
typedef struct WmSystem WmSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the next failing call.
const char *wm_last_error_message(void);

// Builds a plant from row-major `A` (n x n), `B` (n x p), `C` (m x n), `Q` (n x n), `R` (m x m).
//
// # Safety
// Every matrix pointer must reference the stated number of doubles; `out` must be writable.
enum WmStatus wm_system_new(size_t n,
                            size_t m,
                            size_t p,
                            const double *a,
                            const double *b,
                            const double *c,
                            const double *q,
                            const double *r,
                            struct WmSystem **out);

// Seeded random stable, observable and controllable plant with `Q = R = I`.
//
// # Safety
// `out` must be writable.
enum WmStatus wm_system_random(size_t n,
                               size_t m,
                               size_t p,
                               uint64_t seed,
                               double rho_max,
                               struct WmSystem **out);

// # Safety
// `sys` must be a live handle; the output pointers must be writable.
enum WmStatus wm_system_dims(const struct WmSystem *sys, size_t *n, size_t *m, size_t *p);

// # Safety
// `sys` must be null or a handle from `wm_system_new`/`wm_system_random` not yet freed.
void wm_system_free(struct WmSystem *sys);

// Exact optimal watermark covariance (`p x p`, written to `u_out`) for budget `delta` with
// `X = I`, and the threshold `J / 0.9` (written to `zeta_out`).
//
// # Safety
// `sys` must be a live handle; `u_out` must hold `p * p` doubles; `zeta_out` must be writable.
enum WmStatus wm_design_optimal(const struct WmSystem *sys,
                                double delta,
                                double *u_out,
                                double *zeta_out);

// Detector for a plant driven by i.i.d. watermarks of covariance `u` (`p x p`) with threshold `zeta`.
//
// # Safety
// `sys` must be a live handle; `u` must hold `p * p` doubles; `out` must be writable.
enum WmStatus wm_detector_new(const struct WmSystem *sys,
                              const double *u,
                              double zeta,
                              struct WmDetector **out);

// Statistic for the output `y` (length `m`) and the alarm decision `g >= zeta`.
//
// # Safety
// `det` must be a live handle; `y` must hold `m` doubles; the outputs must be writable.
enum WmStatus wm_detector_statistic(const struct WmDetector *det,
                                    const double *y,
                                    size_t m,
                                    double *g_out,
                                    bool *alarm_out);

// Records the watermark applied at this tick (after the statistic was taken).
//
// # Safety
// `det` must be a live handle; `phi` must hold `p` doubles.
enum WmStatus wm_detector_push(struct WmDetector *det, const double *phi, size_t p);

// # Safety
// `det` must be null or a handle from `wm_detector_new` not yet freed.
void wm_detector_free(struct WmDetector *det);

// Learner of model order `n_model` with identity cost weights; `seed` drives its watermark noise.
//
// # Safety
// `out` must be writable.
enum WmStatus wm_learner_new(size_t n_model,
                             size_t m,
                             size_t p,
                             double delta,
                             double beta,
                             uint64_t redesign_interval,
                             uint64_t seed,
                             struct WmLearner **out);

// Draws this tick's watermark into `phi_out` (length `p`).
//
// # Safety
// `learner` must be a live handle; `phi_out` must hold `p` doubles.
enum WmStatus wm_learner_generate(struct WmLearner *learner, double *phi_out, size_t p);

// Online statistic for `y` (length `m`); `WM_STATUS_NOT_READY` before the first model exists.
//
// # Safety
// `learner` must be a live handle; `y` must hold `m` doubles; `g_out` must be writable.
enum WmStatus wm_learner_statistic(const struct WmLearner *learner,
                                   const double *y,
                                   size_t m,
                                   double *g_out);

// Ingests this tick's output `y` (length `m`); redesigns automatically when one is due.
//
// # Safety
// `learner` must be a live handle; `y` must hold `m` doubles.
enum WmStatus wm_learner_ingest(struct WmLearner *learner, const double *y, size_t m);

// Forces an identification and redesign pass. On failure the previous design is kept
// and `WM_STATUS_NUMERICAL` is returned.
//
// # Safety
// `learner` must be a live handle.
enum WmStatus wm_learner_redesign(struct WmLearner *learner);

// Current watermark covariance (`p x p`) the next generated watermark will use.
//
// # Safety
// `learner` must be a live handle; `u_out` must hold `p * p` doubles.
enum WmStatus wm_learner_covariance(const struct WmLearner *learner, double *u_out);

// Serializes the learner (state and noise generator) as JSON; free with `wm_string_free`.
//
// # Safety
// `learner` must be a live handle; `out` must be writable.
enum WmStatus wm_learner_checkpoint_json(const struct WmLearner *learner, char **out);

// Restores a learner from `wm_learner_checkpoint_json` output.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum WmStatus wm_learner_from_checkpoint_json(const char *json, struct WmLearner **out);

// # Safety
// `learner` must be null or a handle from this library not yet freed.
void wm_learner_free(struct WmLearner *learner);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a string returned by this library not yet freed.
void wm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WATERMARK_H */
