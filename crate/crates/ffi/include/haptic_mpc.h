#ifndef HAPTIC_MPC_H
#define HAPTIC_MPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HmStatus {
  HM_STATUS_OK = 0,
  HM_STATUS_NULL_POINTER = 1,
  HM_STATUS_INVALID_ARGUMENT = 2,
  HM_STATUS_CONFIG_ERROR = 3,
  HM_STATUS_RUNTIME_ERROR = 4,
  HM_STATUS_BUFFER_TOO_SMALL = 5,
  HM_STATUS_IO_ERROR = 6,
  HM_STATUS_PANIC = 7,
} HmStatus;

typedef enum HmVariant {
  HM_VARIANT_BASELINE = 0,
  HM_VARIANT_FEED_FORWARD = 1,
  HM_VARIANT_FEEDBACK = 2,
} HmVariant;

// Opaque simulation handle.
typedef struct HmSimulation HmSimulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next API call on the same thread.
const char *hm_last_error(void);

// Library version as a static NUL-terminated string.
const char *hm_version(void);

// Parses a TOML experiment configuration and creates a simulation of one
// variant. With `remote_operator` set, the scripted operator is disabled and
// the device is driven through [`hm_simulation_set_device`].
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out` must be writable.
enum HmStatus hm_simulation_new(const char *config_toml,
                                enum HmVariant variant,
                                bool remote_operator,
                                struct HmSimulation **out);

// Releases a handle; null is ignored.
//
// # Safety
// `sim` must come from [`hm_simulation_new`] and not be used afterwards.
void hm_simulation_free(struct HmSimulation *sim);

// Advances the virtual clock by `dt` seconds (clipped at the end of the run).
//
// # Safety
// `sim` must be a live handle.
enum HmStatus hm_simulation_step(struct HmSimulation *sim, double dt);

// Runs to the configured duration.
//
// # Safety
// `sim` must be a live handle.
enum HmStatus hm_simulation_run_to_end(struct HmSimulation *sim);

// # Safety
// `sim` must be a live handle; `out` must be writable.
enum HmStatus hm_simulation_time(struct HmSimulation *sim, double *out);

// Task-space dimension (length of position and force vectors).
//
// # Safety
// `sim` must be a live handle; `out` must be writable.
enum HmStatus hm_simulation_ee_dim(struct HmSimulation *sim, size_t *out);

// Copies the end-effector position into `out[0..ee_dim]`.
//
// # Safety
// `sim` must be a live handle; `out` must hold `len` doubles.
enum HmStatus hm_simulation_ee(struct HmSimulation *sim, double *out, size_t len);

// Copies the current target position and velocity.
//
// # Safety
// `sim` must be a live handle; both buffers must hold `len` doubles.
enum HmStatus hm_simulation_target(struct HmSimulation *sim,
                                   double *position,
                                   double *velocity,
                                   size_t len);

// Copies the contact force on the end effector.
//
// # Safety
// `sim` must be a live handle; `out` must hold `len` doubles.
enum HmStatus hm_simulation_contact_force(struct HmSimulation *sim, double *out, size_t len);

// Sets the device pose (remote-operator simulations); positions are clamped
// to the device workspace.
//
// # Safety
// `sim` must be a live handle; both buffers must hold `len` doubles.
enum HmStatus hm_simulation_set_device(struct HmSimulation *sim,
                                       const double *position,
                                       const double *velocity,
                                       size_t len);

// # Safety
// `sim` must be a live handle.
enum HmStatus hm_simulation_set_clutch(struct HmSimulation *sim, bool engage);

// Selects the variant used by subsequent solves.
//
// # Safety
// `sim` must be a live handle.
enum HmStatus hm_simulation_set_variant(struct HmSimulation *sim, enum HmVariant variant);

// Evaluates a named metric over the log recorded so far. Metrics that are
// undefined (no contact, no clutched samples) yield NaN.
//
// # Safety
// `sim` must be a live handle; `name` NUL-terminated; `out` writable.
enum HmStatus hm_simulation_metric(struct HmSimulation *sim, const char *name, double *out);

// Writes log, solve records, metadata and metrics into directory `dir`.
//
// # Safety
// `sim` must be a live handle; `dir` NUL-terminated.
enum HmStatus hm_simulation_write_log(struct HmSimulation *sim, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAPTIC_MPC_H */
