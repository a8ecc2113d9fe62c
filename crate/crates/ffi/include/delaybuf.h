#ifndef DELAYBUF_H
#define DELAYBUF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DbsStatus {
  DBS_STATUS_OK = 0,
  DBS_STATUS_NULL_POINTER = 1,
  DBS_STATUS_INVALID_UTF8 = 2,
  DBS_STATUS_INVALID_CONFIG = 3,
  DBS_STATUS_INVALID_ARGUMENT = 4,
  DBS_STATUS_OUT_OF_RANGE = 5,
  DBS_STATUS_RUNTIME_FAILURE = 6,
  DBS_STATUS_PANIC = 7,
} DbsStatus;

/**
 * Parsed and validated run configuration.
 */
typedef struct DbsConfig DbsConfig;

/**
 * Outcome of a matrix run.
 */
typedef struct DbsReport DbsReport;

/**
 * Per-cell results. Missing percentiles are NaN.
 */
typedef struct DbsSummary {
  uint64_t seed;
  double incast_p50;
  double incast_p95;
  double incast_p99;
  double short_p50;
  double short_p95;
  double short_p99;
  double long_p50;
  double long_p95;
  double long_p99;
  double mean_occupancy_bytes;
  double mean_throughput_bps;
  uint64_t completed_flows;
  uint64_t incomplete_flows;
} DbsSummary;

/**
 * Closed-form persistent-congestion operating point for `congested`
 * queues of one priority.
 */
typedef struct DbsSteadyState {
  /**
   * Total occupied buffer in bytes.
   */
  double occupied_bytes;
  double remaining_bytes;
  double per_queue_bytes;
  /**
   * Drain-time bound for the priority, in nanoseconds (rounded down).
   */
  uint64_t drain_bound_ns;
} DbsSteadyState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *dbs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dbs_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from a function of this library documented as returning an
 * owned string, and must not be used afterwards.
 */
void dbs_string_free(char *s);

/**
 * Loads a TOML configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DbsStatus dbs_config_load(const char *path, struct DbsConfig **out);

/**
 * Parses configuration text. Relative paths inside resolve against the
 * working directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DbsStatus dbs_config_parse(const char *text, struct DbsConfig **out);

/**
 * # Safety
 * `cfg` must be NULL or a handle from `dbs_config_load`/`dbs_config_parse`
 * that has not been freed.
 */
void dbs_config_free(struct DbsConfig *cfg);

/**
 * Number of cells in the scenario matrix.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum DbsStatus dbs_config_cell_count(const struct DbsConfig *cfg, size_t *out);

/**
 * Effective configuration with defaults applied, as TOML. Free the result
 * with `dbs_string_free`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum DbsStatus dbs_config_to_toml(const struct DbsConfig *cfg, char **out);

/**
 * Runs every cell of the matrix, writing CSVs below `out_dir`. Cell
 * failures do not fail the call; count them with
 * `dbs_report_failure_count`.
 *
 * # Safety
 * `cfg` must be a live handle, `out_dir` a NUL-terminated string and `out`
 * a valid pointer.
 */
enum DbsStatus dbs_run_matrix(const struct DbsConfig *cfg,
                              const char *out_dir,
                              uint32_t jobs,
                              struct DbsReport **out);

/**
 * # Safety
 * `report` must be NULL or a live handle from `dbs_run_matrix`.
 */
void dbs_report_free(struct DbsReport *report);

/**
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum DbsStatus dbs_report_row_count(const struct DbsReport *report, size_t *out);

/**
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum DbsStatus dbs_report_failure_count(const struct DbsReport *report, size_t *out);

/**
 * Copies row `index` into `out`. `scheme` and `scenario`, when not NULL,
 * receive strings owned by the report.
 *
 * # Safety
 * `report` must be a live handle; `out` must be valid; `scheme` and
 * `scenario` must be NULL or valid.
 */
enum DbsStatus dbs_report_row(const struct DbsReport *report,
                              size_t index,
                              struct DbsSummary *out,
                              const char **scheme,
                              const char **scenario);

/**
 * Description of failed cell `index`, owned by the report.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
enum DbsStatus dbs_report_failure(const struct DbsReport *report, size_t index, const char **out);

/**
 * Runs the persistent-congestion checks. `passed` receives whether all
 * applicable checks held; `checked` the number of scenarios run.
 *
 * # Safety
 * `cfg` must be a live handle; `passed` and `checked` valid pointers.
 */
enum DbsStatus dbs_verify(const struct DbsConfig *cfg, bool *passed, size_t *checked);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum DbsStatus dbs_steady_state(uint64_t total_bytes,
                                uint64_t capacity_bps,
                                uint64_t alpha_num,
                                uint64_t alpha_den,
                                uint32_t congested,
                                struct DbsSteadyState *out);

/**
 * Drain-time bound in nanoseconds (rounded down).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DbsStatus dbs_drain_time_bound_ns(uint64_t total_bytes,
                                       uint64_t alpha_num,
                                       uint64_t alpha_den,
                                       uint64_t capacity_bps,
                                       uint64_t *out);

/**
 * Sojourn-time limit in nanoseconds that the delay-based scheme applies at
 * dequeue.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DbsStatus dbs_delay_threshold_ns(uint64_t total_bytes,
                                      uint64_t occupied_bytes,
                                      uint64_t capacity_bps,
                                      uint64_t alpha_num,
                                      uint64_t alpha_den,
                                      uint32_t congested,
                                      uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELAYBUF_H */
