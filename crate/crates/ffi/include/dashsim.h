#ifndef DASHSIM_H
#define DASHSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DashsimStatus {
  DASHSIM_STATUS_OK = 0,
  DASHSIM_STATUS_NULL_POINTER = 1,
  DASHSIM_STATUS_INVALID_ARGUMENT = 2,
  DASHSIM_STATUS_SIMULATION_ERROR = 3,
  DASHSIM_STATUS_IO_ERROR = 4,
  DASHSIM_STATUS_PANIC = 5,
} DashsimStatus;

/**
 * Values accepted in `DashsimSessionConfig::stack`.
 */
typedef enum DashsimStack {
  DASHSIM_STACK_HTTP2_TCP = 0,
  DASHSIM_STACK_HTTP2_SSL = 1,
  DASHSIM_STACK_HTTP1_QUIC = 2,
  DASHSIM_STACK_SPDY_QUIC = 3,
} DashsimStack;

typedef struct DashsimCatalog DashsimCatalog;

typedef struct DashsimSession DashsimSession;

typedef struct DashsimSessionConfig {
  /**
   * One of the `DashsimStack` values.
   */
  uint32_t stack;
  uint32_t rtt_ms;
  /**
   * Constant link rate; 0 selects the built-in bandwidth trajectory.
   */
  uint32_t rate_kbps;
  /**
   * Representation level, or -1 for adaptive selection.
   */
  int32_t fixed_level;
  /**
   * Number of segments to fetch; 0 fetches the whole catalog.
   */
  uint32_t segment_limit;
  uint64_t seed;
} DashsimSessionConfig;

typedef struct DashsimMetrics {
  double overhead;
  double utilization;
  double avg_throughput_kbps;
  uint32_t segments;
  uint64_t media_bytes;
  uint64_t downlink_bytes;
  uint64_t duration_us;
} DashsimMetrics;

typedef struct DashsimSegment {
  uint32_t index;
  uint32_t level;
  uint32_t bitrate_kbps;
  uint32_t available_kbps;
  uint64_t request_us;
  uint64_t complete_us;
  uint64_t media_bytes;
  double b_m_kbps;
  double b_n_kbps;
} DashsimSegment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dashsim_last_error(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum DashsimStatus dashsim_catalog_default(struct DashsimCatalog **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
enum DashsimStatus dashsim_catalog_load(const char *path, struct DashsimCatalog **out);

/**
 * # Safety
 * `catalog` must come from this library and `out` be valid for writes.
 */
enum DashsimStatus dashsim_catalog_level_count(const struct DashsimCatalog *catalog, uint32_t *out);

/**
 * # Safety
 * `catalog` must come from this library and `out` be valid for writes.
 */
enum DashsimStatus dashsim_catalog_bitrate(const struct DashsimCatalog *catalog,
                                           uint32_t level,
                                           uint32_t *out);

/**
 * # Safety
 * `catalog` must come from this library or be null; it must not be used afterwards.
 */
void dashsim_catalog_free(struct DashsimCatalog *catalog);

/**
 * A config with the defaults of an adaptive HTTP/2-over-TCP session.
 */
struct DashsimSessionConfig dashsim_session_config_default(void);

/**
 * Runs one streaming session to completion.
 *
 * # Safety
 * `catalog` must come from this library, `config` be readable and `out`
 * valid for writes.
 */
enum DashsimStatus dashsim_session_run(const struct DashsimCatalog *catalog,
                                       const struct DashsimSessionConfig *config,
                                       struct DashsimSession **out);

/**
 * # Safety
 * `session` must come from this library and `out` be valid for writes.
 */
enum DashsimStatus dashsim_session_metrics(const struct DashsimSession *session,
                                           struct DashsimMetrics *out);

/**
 * # Safety
 * `session` must come from this library and `out` be valid for writes.
 */
enum DashsimStatus dashsim_session_segment(const struct DashsimSession *session,
                                           uint32_t index,
                                           struct DashsimSegment *out);

/**
 * Writes the per-segment trace as CSV.
 *
 * # Safety
 * `session` must come from this library and `path` be a NUL-terminated string.
 */
enum DashsimStatus dashsim_session_write_trace(const struct DashsimSession *session,
                                               const char *path);

/**
 * # Safety
 * `session` must come from this library or be null; it must not be used afterwards.
 */
void dashsim_session_free(struct DashsimSession *session);

/**
 * Link, IP and transport header bytes as a fraction of a full-MTU frame.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DashsimStatus dashsim_stack_header_overhead(uint32_t stack, double *out);

/**
 * One step of the weighted bandwidth estimator.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum DashsimStatus dashsim_estimate_bandwidth(double w1,
                                              double w2,
                                              double b_prev,
                                              double b_m,
                                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DASHSIM_H */
