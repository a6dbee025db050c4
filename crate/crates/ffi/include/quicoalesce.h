#ifndef QUICOALESCE_H
#define QUICOALESCE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_POINTER = 1,
  QC_STATUS_INVALID_UTF8 = 2,
  QC_STATUS_INVALID_ARGUMENT = 3,
  QC_STATUS_NOT_FOUND = 4,
  QC_STATUS_IO = 5,
  QC_STATUS_BUFFER_TOO_SMALL = 6,
  QC_STATUS_FAILED = 7,
} QcStatus;

typedef enum QcRelayKind {
  QC_RELAY_KIND_DATAGRAM = 0,
  QC_RELAY_KIND_STREAM = 1,
} QcRelayKind;

/**
 * Opaque running relay.
 */
typedef struct QcRelay QcRelay;

/**
 * Opaque campaign summary.
 */
typedef struct QcSummary QcSummary;

typedef struct QcProfile {
  double rtt_ms;
  double downlink_mbps;
  double uplink_mbps;
} QcProfile;

typedef struct QcSummaryRow {
  size_t n;
  double median_ms;
  double q1_ms;
  double q3_ms;
  double iqr_ms;
  double median_rtt_multiple;
  /**
   * NaN when the cell has no baseline.
   */
  double rel_increase;
} QcSummaryRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message (NUL-terminated, truncated to fit) into
 * `buf` and returns its full length without the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t qc_last_error(char *buf, size_t cap);

/**
 * Looks up a built-in access profile by name.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum QcStatus qc_profile_lookup(const char *name, struct QcProfile *out);

/**
 * (combo − baseline) / baseline.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum QcStatus qc_relative_increase(double combo_median, double baseline_median, double *out);

/**
 * Encodes a DNS query into `buf`. `out_len` receives the encoded length,
 * also when the buffer is too small.
 *
 * # Safety
 * `name` must be NUL-terminated; `buf` valid for `cap` bytes; `out_len`
 * valid for writes.
 */
enum QcStatus qc_dns_encode_query(const char *name,
                                  uint16_t qtype,
                                  uint16_t id,
                                  uint8_t *buf,
                                  size_t cap,
                                  size_t *out_len);

/**
 * Summarizes a JSONL dataset.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` valid for writes.
 */
enum QcStatus qc_summary_load(const char *path, struct QcSummary **out);

/**
 * Runs a campaign from a JSON config file and returns its summary.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out` valid for writes.
 */
enum QcStatus qc_campaign_run(const char *config_path, struct QcSummary **out);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t qc_summary_row_count(const struct QcSummary *s);

/**
 * Number of failed visits in the dataset.
 *
 * # Safety
 * `s` must be null or a live handle.
 */
size_t qc_summary_failure_count(const struct QcSummary *s);

/**
 * Numeric columns of the row for (profile, page, combo).
 *
 * # Safety
 * `s` must be a live handle; strings NUL-terminated; `out` valid.
 */
enum QcStatus qc_summary_find(const struct QcSummary *s,
                              const char *profile,
                              const char *page,
                              const char *combo,
                              struct QcSummaryRow *out);

/**
 * Writes the summary CSV.
 *
 * # Safety
 * `s` must be a live handle; `path` NUL-terminated.
 */
enum QcStatus qc_summary_write_csv(const struct QcSummary *s, const char *path);

/**
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void qc_summary_free(struct QcSummary *s);

/**
 * Starts a relay on loopback shaped by the named built-in profile and
 * forwarding to `upstream` ("ip:port").
 *
 * # Safety
 * Strings must be NUL-terminated; `out` valid for writes.
 */
enum QcStatus qc_relay_start(enum QcRelayKind kind,
                             const char *profile,
                             const char *upstream,
                             struct QcRelay **out);

/**
 * Local port the relay listens on, or 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
uint16_t qc_relay_port(const struct QcRelay *r);

/**
 * Stops the relay (queued units are dropped) and releases it.
 *
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void qc_relay_free(struct QcRelay *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUICOALESCE_H */
