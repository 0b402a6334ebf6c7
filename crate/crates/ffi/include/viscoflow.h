#ifndef VISCOFLOW_H
#define VISCOFLOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `VF_OK` is zero; every other value is an error.
 */
typedef enum VfStatus {
  VF_STATUS_OK = 0,
  VF_STATUS_NULL_POINTER = 1,
  VF_STATUS_INVALID_UTF8 = 2,
  VF_STATUS_CONFIG = 3,
  VF_STATUS_INVALID_ARGUMENT = 4,
  VF_STATUS_BLOW_UP = 5,
  VF_STATUS_IO = 6,
  VF_STATUS_BUFFER_TOO_SMALL = 7,
  VF_STATUS_PANIC = 8,
} VfStatus;

/**
 * A running simulation: configuration, noise path, state and stepper.
 */
typedef struct VfSimulation VfSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a simulation from a JSON configuration (null for the defaults).
 * The noise path covers `[0, integration.t_final]`.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string; `out` is writable.
 */
enum VfStatus vf_simulation_new(const char *config_json, struct VfSimulation **out);

/**
 * Releases a simulation. Null is ignored.
 *
 * # Safety
 * `sim` came from [`vf_simulation_new`] and is not used afterwards.
 */
void vf_simulation_free(struct VfSimulation *sim);

/**
 * Advances by `steps` solver steps. On blow-up the state is left unchanged.
 *
 * # Safety
 * `sim` is a live handle.
 */
enum VfStatus vf_simulation_step(struct VfSimulation *sim, size_t steps);

/**
 * Current time.
 *
 * # Safety
 * `sim` is a live handle; `out` is writable.
 */
enum VfStatus vf_simulation_time(const struct VfSimulation *sim, double *out);

/**
 * `||v||_H^2 + ||eta||_M^2`.
 *
 * # Safety
 * `sim` is a live handle; `out` is writable.
 */
enum VfStatus vf_simulation_energy(const struct VfSimulation *sim, double *out);

/**
 * Current OU coefficient `z` (0 without noise).
 *
 * # Safety
 * `sim` is a live handle; `out` is writable.
 */
enum VfStatus vf_simulation_ou(const struct VfSimulation *sim, double *out);

/**
 * Modes per direction `N`; velocity buffers hold `N * N` values.
 *
 * # Safety
 * `sim` is a live handle; `out` is writable.
 */
enum VfStatus vf_simulation_grid_size(const struct VfSimulation *sim, size_t *out);

/**
 * Maximum of `|k . u(k)|` relative to `||u||_V` for the current velocity.
 *
 * # Safety
 * `sim` is a live handle; `out` is writable.
 */
enum VfStatus vf_simulation_divergence(const struct VfSimulation *sim, double *out);

/**
 * Physical velocity `u = v + eps z h` at the grid points, row-major with
 * index `i * N + j` for the point `(i L / N, j L / N)`.
 *
 * # Safety
 * `sim` is a live handle; `u1` and `u2` point to `len` writable doubles.
 */
enum VfStatus vf_simulation_velocity(const struct VfSimulation *sim,
                                     double *u1,
                                     double *u2,
                                     size_t len);

/**
 * Writes the state to a checkpoint file.
 *
 * # Safety
 * `sim` is a live handle; `path` is a NUL-terminated string.
 */
enum VfStatus vf_simulation_save(const struct VfSimulation *sim, const char *path);

/**
 * Replaces the state with a checkpoint written by [`vf_simulation_save`].
 *
 * # Safety
 * `sim` is a live handle; `path` is a NUL-terminated string.
 */
enum VfStatus vf_simulation_load(struct VfSimulation *sim, const char *path);

/**
 * Copies the calling thread's last error message, NUL-terminated, into
 * `buf` and returns its length without the NUL. With a null or short
 * buffer nothing is copied; the return value is then the size needed
 * minus one.
 *
 * # Safety
 * `buf` is null or points to `len` writable bytes.
 */
size_t vf_last_error_message(char *buf, size_t len);

/**
 * Library version, a static NUL-terminated string.
 */
const char *vf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VISCOFLOW_H */
