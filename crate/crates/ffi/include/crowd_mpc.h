#ifndef CROWD_MPC_H
#define CROWD_MPC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_CONFIG = 3,
  CM_STATUS_INFEASIBLE = 4,
  CM_STATUS_ITERATION_LIMIT = 5,
  CM_STATUS_IO = 6,
  CM_STATUS_INTERNAL = 7,
} CmStatus;

typedef enum CmController {
  CM_CONTROLLER_MPC = 0,
  CM_CONTROLLER_PID = 1,
} CmController;

// Opaque run configuration.
typedef struct CmConfig CmConfig;

// Opaque closed-loop controller (MPC with PID fallback, or PID alone).
typedef struct CmControllerHandle CmControllerHandle;

// A pedestrian as seen by the controller. Positions in m, velocities in m/s.
typedef struct CmPedestrian {
  double x;
  double y;
  double vx;
  double vy;
  double dest_x;
  double dest_y;
  double mass;
  double radius;
  double desired_speed;
} CmPedestrian;

typedef struct CmDecision {
  // Applied force, N.
  double u;
  // 1 when the MPC solution was applied, 0 for the PID fallback.
  uint8_t from_mpc;
  uint32_t qp_iterations;
  // Center gap to the closest pedestrian ahead in the corridor, m.
  double front_gap;
} CmDecision;

typedef struct CmEpisodeSummary {
  // Time at which the front bumper crossed the finish line, or NaN on timeout.
  double completion_time;
  double duration;
  double longest_wait;
  uint8_t stopped;
  uint8_t collided;
  uint32_t steps;
  uint32_t mpc_steps;
  uint32_t pid_steps;
} CmEpisodeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` as a NUL-terminated
// string, truncating if needed. Returns the full message length in bytes,
// excluding the terminator. `buf` may be null when `len` is 0.
size_t cm_last_error(char *buf, size_t len);

// Default configuration. Never returns null.
struct CmConfig *cm_config_default(void);

// Parse a flat `section.key = value` configuration over the defaults.
enum CmStatus cm_config_parse(const char *text, struct CmConfig **out);

// Load a configuration file.
enum CmStatus cm_config_load(const char *path, struct CmConfig **out);

void cm_config_free(struct CmConfig *cfg);

// Solve `min U'HU + 2F'U  s.t.  G U >= h`. `quad` is n x n and `g` is m x n,
// both row-major. H must be positive definite. On success `u_out` (length n) holds the minimizer.
// An infeasible problem returns `Infeasible` and leaves `u_out` untouched.
enum CmStatus cm_qp_solve(size_t n,
                          size_t m,
                          const double *quad,
                          const double *lin,
                          const double *g,
                          const double *h,
                          double *u_out,
                          double *objective_out,
                          uint32_t *iterations_out);

// Create a controller for the lane in `cfg`. The PID integral starts as if
// the vehicle had been holding `initial_speed`.
enum CmStatus cm_controller_new(const struct CmConfig *cfg,
                                enum CmController kind,
                                double initial_speed,
                                struct CmControllerHandle **out);

// One control step for a vehicle at position `s`, speed `v`.
enum CmStatus cm_controller_step(struct CmControllerHandle *ctrl,
                                 double s,
                                 double v,
                                 const struct CmPedestrian *peds,
                                 size_t n_peds,
                                 struct CmDecision *out);

void cm_controller_free(struct CmControllerHandle *ctrl);

// Run one closed-loop episode on the random crowd drawn from `seed`, using
// the scenario in `cfg` with `n_pedestrians` pedestrians.
enum CmStatus cm_episode_run(const struct CmConfig *cfg,
                             size_t n_pedestrians,
                             uint64_t seed,
                             enum CmController kind,
                             struct CmEpisodeSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CROWD_MPC_H */
