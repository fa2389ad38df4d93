#ifndef MDIQDS_H
#define MDIQDS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MdiqdsStatus {
  MDIQDS_STATUS_OK = 0,
  MDIQDS_STATUS_NULL_POINTER = 1,
  MDIQDS_STATUS_INVALID_UTF8 = 2,
  // Bad scenario or out-of-range argument.
  MDIQDS_STATUS_INVALID = 3,
  // The run completed but missed a threshold, or the pipeline found the
  // protocol infeasible.
  MDIQDS_STATUS_INFEASIBLE = 4,
  // Too little data for the estimators.
  MDIQDS_STATUS_INSUFFICIENT_DATA = 5,
  MDIQDS_STATUS_IO = 6,
  MDIQDS_STATUS_PANIC = 7,
} MdiqdsStatus;

// Result of running a scenario.
typedef struct MdiqdsReport MdiqdsReport;

// Scenario loaded from JSON and merged onto the defaults.
typedef struct MdiqdsScenario MdiqdsScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread; do not free it.
const char *mdiqds_last_error(void);

// Library version as a static NUL-terminated string.
const char *mdiqds_version(void);

// Frees a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void mdiqds_string_free(char *s);

// Builds a scenario from a JSON object. `preset` may be NULL; otherwise it
// names a detector preset applied before the JSON values.
//
// # Safety
// `json` and a non-NULL `preset` must be NUL-terminated strings; `out` must
// be writable.
enum MdiqdsStatus mdiqds_scenario_from_json(const char *json,
                                            const char *preset,
                                            struct MdiqdsScenario **out);

// Sets the seed of a scenario.
//
// # Safety
// `scenario` must be a live handle.
enum MdiqdsStatus mdiqds_scenario_set_seed(struct MdiqdsScenario *scenario, uint64_t seed);

// Releases a scenario. NULL is ignored.
//
// # Safety
// `scenario` must come from [`mdiqds_scenario_from_json`] and not have been
// freed.
void mdiqds_scenario_free(struct MdiqdsScenario *scenario);

// Runs a scenario. A run that misses a threshold still yields a report;
// check [`mdiqds_report_exit_code`].
//
// # Safety
// `scenario` must be a live handle and `out` writable.
enum MdiqdsStatus mdiqds_run(const struct MdiqdsScenario *scenario, struct MdiqdsReport **out);

// 0 when the run met every threshold, 2 otherwise, -1 for NULL.
//
// # Safety
// `report` must be a live handle or NULL.
int32_t mdiqds_report_exit_code(const struct MdiqdsReport *report);

// The report as pretty-printed JSON, freed with [`mdiqds_string_free`].
//
// # Safety
// `report` must be a live handle and `out` writable.
enum MdiqdsStatus mdiqds_report_to_json(const struct MdiqdsReport *report, char **out);

// The report as CSV, freed with [`mdiqds_string_free`].
//
// # Safety
// `report` must be a live handle and `out` writable.
enum MdiqdsStatus mdiqds_report_to_csv(const struct MdiqdsReport *report, char **out);

// Releases a report. NULL is ignored.
//
// # Safety
// `report` must come from [`mdiqds_run`] and not have been freed.
void mdiqds_report_free(struct MdiqdsReport *report);

// Binary entropy `h(p)` in bits.
enum MdiqdsStatus mdiqds_binary_entropy(double p, double *out);

// Inverse of `h` on `[0, 1/2]`.
enum MdiqdsStatus mdiqds_inverse_binary_entropy(double y, double *out);

// `log2 sum_{m<=r} C(n, m)`, exact for small `n` and an entropy bound
// beyond.
enum MdiqdsStatus mdiqds_binomial_tail_log2(uint64_t n, uint64_t r, double *out);

// Splits `(e_bar, p_e)` into thirds.
//
// # Safety
// `s_a` and `s_v` must be writable.
enum MdiqdsStatus mdiqds_choose_thresholds(double e_bar, double p_e, double *s_a, double *s_v);

// `2 exp(-(s_v - s_a)^2 n_k / 4)`, clamped to 1.
enum MdiqdsStatus mdiqds_repudiation_bound(double s_a, double s_v, double n_k, double *out);

// Raw-key generation time in minutes for `n_sig` pulses at `pulse_rate`.
double mdiqds_raw_key_minutes(double n_sig, double pulse_rate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MDIQDS_H */
