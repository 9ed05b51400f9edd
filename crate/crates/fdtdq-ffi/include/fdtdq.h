#ifndef FDTDQ_H
#define FDTDQ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FdtdqStatus {
  FDTDQ_STATUS_OK = 0,
  FDTDQ_STATUS_NULL_POINTER = 1,
  FDTDQ_STATUS_INVALID_ARGUMENT = 2,
  FDTDQ_STATUS_CONFIG = 3,
  /**
   * The time step exceeds a stability limit.
   */
  FDTDQ_STATUS_UNSTABLE = 4,
  /**
   * The divergence guard stopped the simulation.
   */
  FDTDQ_STATUS_DIVERGED = 5,
  FDTDQ_STATUS_IO = 6,
  FDTDQ_STATUS_OUT_OF_RANGE = 7,
  /**
   * Any other failure, including a caught panic.
   */
  FDTDQ_STATUS_INTERNAL = 8,
} FdtdqStatus;

/**
 * Opaque simulation handle.
 */
typedef struct FdtdqSimulation FdtdqSimulation;

/**
 * Outcome of [`fdtdq_run`].
 */
typedef struct FdtdqRunSummary {
  uint64_t n_t;
  uint64_t steps_completed;
  uint64_t last_stable_step;
  bool diverged;
  double dt_seconds;
  double max_residual_p;
  double max_residual_h;
  double min_p;
} FdtdqRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fdtdq_version(void);

/**
 * Copy the calling thread's last error message into `buf` (truncated and
 * always NUL-terminated when `len > 0`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t fdtdq_last_error(char *buf, size_t len);

/**
 * Closed-form CFL limit (seconds) for spacings `dx, dy, dz` (m), largest
 * `|U|` (J) and particle mass (kg).
 *
 * # Safety
 * `out_dt` must be null or valid for writes.
 */
enum FdtdqStatus fdtdq_cfl_limit(double dx,
                                 double dy,
                                 double dz,
                                 double max_abs_u,
                                 double mass,
                                 double *out_dt);

/**
 * Build a simulation from a JSON run configuration.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be valid for
 * writes. On success `*out` owns a handle to free with
 * [`fdtdq_simulation_free`].
 */
enum FdtdqStatus fdtdq_simulation_new(const char *config_json,
                                      bool allow_unstable,
                                      struct FdtdqSimulation **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a handle from [`fdtdq_simulation_new`] not yet freed.
 */
void fdtdq_simulation_free(struct FdtdqSimulation *sim);

/**
 * Advance `n_steps` steps. Returns `Diverged` once the guard trips; the
 * handle then refuses further steps.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum FdtdqStatus fdtdq_simulation_step(struct FdtdqSimulation *sim, uint64_t n_steps);

/**
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum FdtdqStatus fdtdq_simulation_region_count(const struct FdtdqSimulation *sim, size_t *out);

/**
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum FdtdqStatus fdtdq_simulation_dt(const struct FdtdqSimulation *sim, double *out);

/**
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum FdtdqStatus fdtdq_simulation_step_index(const struct FdtdqSimulation *sim, uint64_t *out);

/**
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum FdtdqStatus fdtdq_simulation_node_count(const struct FdtdqSimulation *sim,
                                             size_t region,
                                             size_t *out);

/**
 * Discrete probability `℘ⁿ` of one region at the current step.
 *
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum FdtdqStatus fdtdq_simulation_probability(const struct FdtdqSimulation *sim,
                                              size_t region,
                                              double *out);

/**
 * Copy `ψ_Rⁿ` and `ψ_I^{n−½}` of one region into caller buffers of `len`
 * values each (`len` must equal the node count). Either buffer may be null.
 *
 * # Safety
 * Non-null buffers must be valid for `len` writes.
 */
enum FdtdqStatus fdtdq_simulation_copy_state(const struct FdtdqSimulation *sim,
                                             size_t region,
                                             double *psi_r,
                                             double *psi_i,
                                             size_t len);

/**
 * Run a configuration to completion, writing CSVs and `summary.json` into
 * `out_dir`, as `fdtdq run` does. A divergence returns `Diverged` with the
 * summary filled in.
 *
 * # Safety
 * String arguments must be NUL-terminated; `summary` must be null or valid
 * for writes.
 */
enum FdtdqStatus fdtdq_run(const char *config_json,
                           const char *out_dir,
                           bool allow_unstable,
                           struct FdtdqRunSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FDTDQ_H */
