#ifndef PINNWORKS_H
#define PINNWORKS_H

/* Generated by cbindgen from the pinnworks-ffi crate; regenerate with `cargo build -p pinnworks-ffi` instead of editing. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call. Anything but `Ok` leaves a message for
 * [`pw_last_error`].
 */
typedef enum PwStatus {
  PW_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PW_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PW_STATUS_INVALID_UTF8 = 2,
  /**
   * A system description failed to parse.
   */
  PW_STATUS_PARSE_ERROR = 3,
  /**
   * Arguments or file contents were structurally valid but unusable
   * (unknown preset, mismatched shapes, out-of-range settings, ...).
   */
  PW_STATUS_INVALID_INPUT = 4,
  /**
   * The computation hit non-finite values or an unresolvable step size.
   */
  PW_STATUS_NUMERIC_ERROR = 5,
  /**
   * The filesystem got in the way.
   */
  PW_STATUS_IO_ERROR = 6,
  /**
   * A bug: an internal panic was caught at the boundary.
   */
  PW_STATUS_INTERNAL_ERROR = 7,
} PwStatus;

/**
 * An ODE system plus, for built-in presets, its scenario metadata.
 */
typedef struct PwSystem PwSystem;

/**
 * A time grid with one state row per entry.
 */
typedef struct PwTrajectory PwTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the NUL-terminated text of the calling thread's last error into
 * `buf` (truncating to `cap` bytes including the NUL) and returns the full
 * message length excluding the NUL. With a null or empty buffer it only
 * reports the length.
 *
 * # Safety
 *
 * `buf` must either be null or point to at least `cap` writable bytes.
 */
size_t pw_last_error(char *buf, size_t cap);

/**
 * The library version as a static NUL-terminated string.
 */
const char *pw_version(void);

/**
 * Parses a system description (the same text format the CLI accepts) into
 * a new system object, stored in `*out` on success.
 *
 * # Safety
 * `source` must be a valid NUL-terminated string, `out` a valid pointer.
 */
enum PwStatus pw_system_parse(const char *source, struct PwSystem **out);

/**
 * Builds one of the built-in scenarios by name
 * (normal, case1, case2, pole-slipping, undamped).
 *
 * # Safety
 * `name` must be a valid NUL-terminated string, `out` a valid pointer.
 */
enum PwStatus pw_system_preset(const char *name, struct PwSystem **out);

/**
 * Number of state variables, or 0 for a null system.
 *
 * # Safety
 * `sys` must be null or a pointer from a `pw_system_*` constructor.
 */
size_t pw_system_state_count(const struct PwSystem *sys);

/**
 * Copies the NUL-terminated name of state `index` into `buf` (truncating
 * to `cap` bytes including the NUL) and returns the full name length
 * excluding the NUL; returns 0 when `sys` is null or `index` is out of
 * range.
 *
 * # Safety
 * `sys` as in [`pw_system_state_count`]; `buf` must be valid for `cap`
 * bytes of writes or null.
 */
size_t pw_system_state_name(const struct PwSystem *sys, size_t index, char *buf, size_t cap);

/**
 * Stores the stable equilibrium of a built-in scenario in
 * `(*out_delta, *out_omega)`. Fails with `PW_STATUS_INVALID_INPUT` for
 * systems that did not come from a preset or whose scenario has no stable
 * equilibrium.
 *
 * # Safety
 * `sys` as in [`pw_system_state_count`]; the out pointers must be valid.
 */
enum PwStatus pw_system_equilibrium(const struct PwSystem *sys,
                                    double *out_delta,
                                    double *out_omega);

/**
 * Releases a system object. Null is a no-op.
 *
 * # Safety
 * `sys` must be null or an owned pointer from a `pw_system_*` constructor,
 * not freed before.
 */
void pw_system_free(struct PwSystem *sys);

/**
 * Integrates the system over its own domain with fixed-step RK4 and stores
 * a new trajectory in `*out`.
 *
 * # Safety
 * `sys` from a `pw_system_*` constructor; `out` a valid pointer.
 */
enum PwStatus pw_simulate_fixed(const struct PwSystem *sys, double dt, struct PwTrajectory **out);

/**
 * Integrates with the adaptive solver, emitting output every `output_dt`,
 * and stores a new trajectory in `*out`.
 *
 * # Safety
 * `sys` from a `pw_system_*` constructor; `out` a valid pointer.
 */
enum PwStatus pw_simulate_adaptive(const struct PwSystem *sys,
                                   double abs_tol,
                                   double rel_tol,
                                   double output_dt,
                                   struct PwTrajectory **out);

/**
 * Number of time points, or 0 for a null trajectory.
 *
 * # Safety
 * `traj` must be null or a pointer produced by a `pw_simulate_*` call.
 */
size_t pw_trajectory_len(const struct PwTrajectory *traj);

/**
 * Number of state variables per row, or 0 for a null trajectory.
 *
 * # Safety
 * `traj` as in [`pw_trajectory_len`].
 */
size_t pw_trajectory_state_count(const struct PwTrajectory *traj);

/**
 * The time stamp of row `i`; NaN when out of range or null.
 *
 * # Safety
 * `traj` as in [`pw_trajectory_len`].
 */
double pw_trajectory_time(const struct PwTrajectory *traj, size_t i);

/**
 * The value of state `var` at row `i`; NaN when out of range or null.
 *
 * # Safety
 * `traj` as in [`pw_trajectory_len`].
 */
double pw_trajectory_value(const struct PwTrajectory *traj, size_t i, size_t var);

/**
 * Copies up to `cap` time stamps into `buf` and returns the number copied.
 *
 * # Safety
 * `traj` as in [`pw_trajectory_len`]; `buf` valid for `cap` writes.
 */
size_t pw_trajectory_copy_times(const struct PwTrajectory *traj, double *buf, size_t cap);

/**
 * Copies up to `cap` state values into `buf` in row-major order (all
 * states of row 0, then row 1, ...) and returns the number copied.
 *
 * # Safety
 * `traj` as in [`pw_trajectory_len`]; `buf` valid for `cap` writes.
 */
size_t pw_trajectory_copy_values(const struct PwTrajectory *traj, double *buf, size_t cap);

/**
 * Releases a trajectory. Null is a no-op.
 *
 * # Safety
 * `traj` must be null or an owned pointer from a `pw_simulate_*` call, not
 * freed before.
 */
void pw_trajectory_free(struct PwTrajectory *traj);

/**
 * Runs one training job described by the configuration file at
 * `config_path` (the CLI's INI format). A non-negative `seed_override`
 * replaces the configured seed. When `out_dir` is non-null the full CLI
 * artifact set (checkpoint, report, loss history) is written there. When
 * `final_loss` / `iterations` are non-null they receive the result summary.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string; `out_dir` null or
 * the same; `final_loss` and `iterations` null or valid for writes.
 */
enum PwStatus pw_train(const char *config_path,
                       int64_t seed_override,
                       const char *out_dir,
                       double *final_loss,
                       size_t *iterations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PINNWORKS_H */
