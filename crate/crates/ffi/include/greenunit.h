#ifndef GREENUNIT_H
#define GREENUNIT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes shared by every function.
typedef enum GuStatus {
  GU_STATUS_OK = 0,
  GU_STATUS_NULL_POINTER = 1,
  GU_STATUS_INVALID_INPUT = 2,
  GU_STATUS_DOMAIN = 3,
  GU_STATUS_INSUFFICIENT_DATA = 4,
  GU_STATUS_NOT_FOUND = 5,
  GU_STATUS_IO = 6,
  GU_STATUS_PARSE = 7,
  GU_STATUS_PROVIDER_UNAVAILABLE = 8,
  GU_STATUS_BROWSER = 9,
  GU_STATUS_CONDITION = 10,
  GU_STATUS_INVALID_UTF8 = 11,
  GU_STATUS_PANIC = 12,
} GuStatus;

// Emission factors. Create with `gu_factors_default`, release with `gu_factors_free`.
typedef struct GuFactors GuFactors;

// A results store rooted at a directory.
typedef struct GuStore GuStore;

// Plain copy of every emission factor.
typedef struct GuFactorValues {
  double grid_intensity;
  double joule_to_kwh;
  double transfer_intensity_base;
  int32_t base_year;
  double halving_period_years;
  int32_t assessment_year;
  double device_embodied_total;
  double device_lifetime_seconds;
  double resource_share;
  double embodied_to_use_ratio;
} GuFactorValues;

// Baseline-minus-variant differences for one functional unit.
typedef struct GuUnitDeltas {
  double energy_j;
  double data_mb;
  double duration_s;
} GuUnitDeltas;

// Emission components in gCO2e.
typedef struct GuEmissionEntry {
  double use_user_g;
  double use_network_g;
  double embodied_user_g;
  double embodied_network_g;
  double total_g;
} GuEmissionEntry;

typedef struct GuProjection {
  double population;
  double sessions_per_year;
  double per_session_saving_g;
  double annual_saving_t;
  double flight_equivalents;
} GuProjection;

typedef struct GuTestVerdict {
  double statistic;
  double p_value;
  double alpha;
  bool significant;
  bool degenerate;
} GuTestVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gu_version(void);

// Copies the calling thread's last error message into `buf`.
//
// Returns the message length including the terminating NUL, or 0 when the
// last call succeeded. At most `len` bytes are written and the copy is
// always NUL-terminated when `len > 0`.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t gu_last_error_message(char *buf, size_t len);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void gu_string_free(char *s);

// New handle holding the default factors.
struct GuFactors *gu_factors_default(void);

// Factors from the `[factors]` table of a config file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum GuStatus gu_factors_from_config(const char *path, struct GuFactors **out);

// # Safety
// `f` must be null or a live handle from this library.
void gu_factors_free(struct GuFactors *f);

// # Safety
// `f` must be a live handle and `out` writable.
enum GuStatus gu_factors_get(const struct GuFactors *f, struct GuFactorValues *out);

// Replaces every factor after validation; the handle is unchanged on error.
//
// # Safety
// `f` must be a live handle and `values` readable.
enum GuStatus gu_factors_set(struct GuFactors *f, const struct GuFactorValues *values);

// Grid carbon intensity per joule, gCO2e/J.
//
// # Safety
// `f` must be a live handle and `out` writable.
enum GuStatus gu_c_elec(const struct GuFactors *f, double *out);

// Network transfer intensity at the assessment year, µgCO2e/MB.
//
// # Safety
// `f` must be a live handle and `out` writable.
enum GuStatus gu_transfer_intensity(const struct GuFactors *f, double *out);

// Emission components for one set of deltas.
//
// # Safety
// `f` must be a live handle, `deltas` readable and `out` writable.
enum GuStatus gu_emission_breakdown(const struct GuFactors *f,
                                    const struct GuUnitDeltas *deltas,
                                    struct GuEmissionEntry *out);

// Annual saving of a per-session delta across a population.
//
// # Safety
// `out` must be writable.
enum GuStatus gu_scale_projection(double per_session_g,
                                  double population,
                                  double sessions_per_year,
                                  double flight_rt_tonnes,
                                  struct GuProjection *out);

// Two-sided Welch t-test of `a` against `b`.
//
// # Safety
// `a` and `b` must point to `na` and `nb` values; `out` must be writable.
enum GuStatus gu_welch_t_test(const double *a,
                              size_t na,
                              const double *b,
                              size_t nb,
                              double alpha,
                              struct GuTestVerdict *out);

// Opens a results store. The directory need not exist yet.
//
// # Safety
// `root` must be a NUL-terminated string and `out` writable.
enum GuStatus gu_store_open(const char *root, struct GuStore **out);

// # Safety
// `s` must be null or a live handle from this library.
void gu_store_free(struct GuStore *s);

// Renders the comparison and emission report of two stored series.
//
// `baseline` and `variant` are `service[:condition]` references where the
// condition is a preset name or label. `format` is one of `plain`, `csv`,
// `json` or `markdown`. On success `*out` receives a string to release with
// [`gu_string_free`].
//
// # Safety
// Handles must be live, strings NUL-terminated and `out` writable.
enum GuStatus gu_store_compare(const struct GuStore *store,
                               const struct GuFactors *factors,
                               const char *baseline,
                               const char *variant,
                               const char *format,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GREENUNIT_H */
