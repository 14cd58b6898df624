#ifndef PAGEVM_H
#define PAGEVM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PagevmStatus {
  PAGEVM_STATUS_OK = 0,
  PAGEVM_STATUS_NULL_ARGUMENT = 1,
  PAGEVM_STATUS_INVALID_UTF8 = 2,
  PAGEVM_STATUS_UNKNOWN_NAME = 3,
  PAGEVM_STATUS_INVALID_WORKLOAD = 4,
  PAGEVM_STATUS_INVALID_CONFIG = 5,
  PAGEVM_STATUS_IO = 6,
  PAGEVM_STATUS_PARSE = 7,
  PAGEVM_STATUS_ENGINE = 8,
  // `pagevm_engine_step` ran out of turns.
  PAGEVM_STATUS_DONE = 9,
  PAGEVM_STATUS_PANIC = 10,
} PagevmStatus;

// A replay in progress.
typedef struct PagevmEngine PagevmEngine;

// A policy configuration.
typedef struct PagevmPolicy PagevmPolicy;

// Counters and summary of a finished replay.
typedef struct PagevmReport PagevmReport;

// A workload: page catalog plus turn script.
typedef struct PagevmWorkload PagevmWorkload;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread; do not free it.
const char *pagevm_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void pagevm_string_free(char *s);

// Generates a synthetic family workload (`evidence_heavy`,
// `interruption_heavy`, `lifecycle_torture`, `multi_session`).
//
// # Safety
// `family` must be a NUL-terminated string; `out` must be writable.
enum PagevmStatus pagevm_workload_generate(const char *family,
                                           uint64_t seed,
                                           uint32_t turns,
                                           struct PagevmWorkload **out);

// Builds a fixed scenario: an adversarial one (`starvation`, `churn`,
// `cascade`) or a lifecycle regression case by its name.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum PagevmStatus pagevm_workload_scenario(const char *name, struct PagevmWorkload **out);

// Parses and validates a workload from JSON text.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum PagevmStatus pagevm_workload_from_json(const char *json, struct PagevmWorkload **out);

// Loads a workload file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PagevmStatus pagevm_workload_load(const char *path, struct PagevmWorkload **out);

// Canonical JSON of the workload, or null if `w` is null. Free with
// [`pagevm_string_free`].
//
// # Safety
// `w` must be a live workload handle or null.
char *pagevm_workload_to_json(const struct PagevmWorkload *w);

// Number of scripted turns, 0 for null.
//
// # Safety
// `w` must be a live workload handle or null.
uint32_t pagevm_workload_turns(const struct PagevmWorkload *w);

// # Safety
// `w` must come from this library and not have been freed. Null is ignored.
void pagevm_workload_free(struct PagevmWorkload *w);

// Policy preset (`full`, `retrieval`, `compaction-hybrid`, `lru`, `oracle`,
// ...) at the given token budget.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum PagevmStatus pagevm_policy_preset(const char *name,
                                       uint32_t budget,
                                       struct PagevmPolicy **out);

// Applies one `key=value` override, e.g. `auto_pin=false` or `w_rec=2.5`.
// The policy is left untouched on failure.
//
// # Safety
// `p` must be a live policy handle; `knob` a NUL-terminated string.
enum PagevmStatus pagevm_policy_set(struct PagevmPolicy *p, const char *knob);

// Token budget of the policy, 0 for null.
//
// # Safety
// `p` must be a live policy handle or null.
uint32_t pagevm_policy_budget(const struct PagevmPolicy *p);

// # Safety
// `p` must come from this library and not have been freed. Null is ignored.
void pagevm_policy_free(struct PagevmPolicy *p);

// Replays the whole workload under the policy. Neither input is consumed.
//
// # Safety
// `w` and `p` must be live handles; `out` must be writable.
enum PagevmStatus pagevm_replay(const struct PagevmWorkload *w,
                                const struct PagevmPolicy *p,
                                struct PagevmReport **out);

// Starts a step-by-step replay.
//
// # Safety
// `w` and `p` must be live handles; `out` must be writable.
enum PagevmStatus pagevm_engine_new(const struct PagevmWorkload *w,
                                    const struct PagevmPolicy *p,
                                    struct PagevmEngine **out);

// Runs the next scripted turn and writes its decision record as one JSON
// line to `record_out` (free with [`pagevm_string_free`]; may be null to
// discard). Returns `PAGEVM_DONE` once every turn has run.
//
// # Safety
// `e` must be a live engine handle; `record_out` writable or null.
enum PagevmStatus pagevm_engine_step(struct PagevmEngine *e, char **record_out);

// Report for the turns run so far.
//
// # Safety
// `e` must be a live engine handle; `out` must be writable.
enum PagevmStatus pagevm_engine_report(const struct PagevmEngine *e, struct PagevmReport **out);

// # Safety
// `e` must come from this library and not have been freed. Null is ignored.
void pagevm_engine_free(struct PagevmEngine *e);

// Explicit faults, pinned-invariant misses included. 0 for null.
//
// # Safety
// `r` must be a live report handle or null.
uint64_t pagevm_report_explicit_faults(const struct PagevmReport *r);

// (explicit faults + duplicate-signature alerts) / (hits + 1). 0 for null.
//
// # Safety
// `r` must be a live report handle or null.
double pagevm_report_thrash(const struct PagevmReport *r);

// Turns replayed. 0 for null.
//
// # Safety
// `r` must be a live report handle or null.
uint64_t pagevm_report_turns(const struct PagevmReport *r);

// Count for one fault class by label (`refetch`, `flush_miss`, ...).
//
// # Safety
// `r` must be a live report handle, `class` a NUL-terminated string and
// `out` writable.
enum PagevmStatus pagevm_report_fault_count(const struct PagevmReport *r,
                                            const char *class_,
                                            uint64_t *out);

// Full report as JSON, or null if `r` is null. Free with
// [`pagevm_string_free`].
//
// # Safety
// `r` must be a live report handle or null.
char *pagevm_report_to_json(const struct PagevmReport *r);

// # Safety
// `r` must come from this library and not have been freed. Null is ignored.
void pagevm_report_free(struct PagevmReport *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAGEVM_H */
