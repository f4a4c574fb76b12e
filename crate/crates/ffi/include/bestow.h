#ifndef BESTOW_H
#define BESTOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BstStatus {
  BST_STATUS_OK = 0,
  BST_STATUS_NULL_ARGUMENT = 1,
  BST_STATUS_INVALID_UTF8 = 2,
  BST_STATUS_PARSE_ERROR = 3,
  BST_STATUS_TYPE_ERROR = 4,
  BST_STATUS_INVALID_ARGUMENT = 5,
  BST_STATUS_RUNTIME_ERROR = 6,
  BST_STATUS_PANIC = 7,
} BstStatus;

/**
 * Calculus variants, as accepted by [`bst_program_parse`].
 */
typedef enum BstVariant {
  /**
   * Take the variant from the source's `#variant` pragma (default core).
   */
  BST_VARIANT_FROM_PRAGMA = -1,
  BST_VARIANT_CORE = 0,
  BST_VARIANT_TRANSFER = 1,
  BST_VARIANT_PRIVATE = 2,
} BstVariant;

/**
 * A counter owned by its own actor and reachable only through a bestowed
 * reference: every update is delegated to the owner.
 */
typedef struct BstCounter BstCounter;

/**
 * A parsed program.
 */
typedef struct BstProgram BstProgram;

/**
 * The outcome of [`bst_explore`] or [`bst_run`].
 */
typedef struct BstReport BstReport;

/**
 * An actor runtime.
 */
typedef struct BstRuntime BstRuntime;

typedef struct BstExploreOptions {
  size_t depth;
  size_t transfer_cap;
  size_t state_budget;
  /**
   * Merge states equal up to renaming.
   */
  bool canonicalize;
} BstExploreOptions;

typedef struct BstRuntimeOptions {
  /**
   * Run one participant at a time under a seeded scheduler.
   */
  bool deterministic;
  uint64_t seed;
} BstRuntimeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *bst_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void bst_string_free(char *s);

/**
 * Parses `source` in `variant`, a [`BstVariant`] value. On success `*out`
 * owns a new program.
 *
 * # Safety
 * `source` must be a NUL-terminated string; `out` must be writable.
 */
enum BstStatus bst_program_parse(const char *source, int32_t variant, struct BstProgram **out);

/**
 * # Safety
 * `program` must be NULL or a live program.
 */
void bst_program_free(struct BstProgram *program);

/**
 * The variant the program was parsed in.
 *
 * # Safety
 * `program` must be a live program.
 */
enum BstVariant bst_program_variant(const struct BstProgram *program);

/**
 * Typechecks the program; on success `*type_out` (if not NULL) receives
 * its type as a string. A rejection returns [`BstStatus::TypeError`] with
 * the error kind and location in [`bst_last_error`].
 *
 * # Safety
 * `program` must be a live program; `type_out` NULL or writable.
 */
enum BstStatus bst_program_check(const struct BstProgram *program, char **type_out);

/**
 * Default exploration bounds: depth 60, two transfers, two million states.
 */
struct BstExploreOptions bst_explore_options_default(void);

/**
 * Explores every interleaving of the program. Violations are not an
 * error: inspect them with [`bst_report_violations`] and [`bst_report_json`].
 *
 * # Safety
 * `program` must be a live program, `options` NULL (defaults) or valid,
 * `out` writable.
 */
enum BstStatus bst_explore(const struct BstProgram *program,
                           const struct BstExploreOptions *options,
                           struct BstReport **out);

/**
 * Runs the program along one schedule: `fifo`, `random:SEED`, or an
 * inline script `script:` followed by labels separated by newlines or `;`.
 *
 * # Safety
 * `program` must be a live program, `schedule` a NUL-terminated string,
 * `out` writable.
 */
enum BstStatus bst_run(const struct BstProgram *program,
                       const char *schedule,
                       size_t max_steps,
                       struct BstReport **out);

/**
 * # Safety
 * `report` must be a live report.
 */
size_t bst_report_violations(const struct BstReport *report);

/**
 * The report as JSON (`"schema": 1`). Borrowed: valid until the report is
 * freed.
 *
 * # Safety
 * `report` must be a live report.
 */
const char *bst_report_json(const struct BstReport *report);

/**
 * # Safety
 * `report` must be NULL or a live report.
 */
void bst_report_free(struct BstReport *report);

/**
 * Starts a runtime. `options` may be NULL (parallel scheduling).
 *
 * # Safety
 * `options` NULL or valid; `out` writable.
 */
enum BstStatus bst_runtime_new(const struct BstRuntimeOptions *options, struct BstRuntime **out);

/**
 * Shuts the runtime down. Counters created from it fail afterwards.
 *
 * # Safety
 * `runtime` must be NULL or a live runtime.
 */
void bst_runtime_free(struct BstRuntime *runtime);

/**
 * Runtime counters as JSON; free with [`bst_string_free`].
 *
 * # Safety
 * `runtime` must be a live runtime; `out` writable.
 */
enum BstStatus bst_runtime_stats_json(const struct BstRuntime *runtime, char **out);

/**
 * Spawns an actor owning a counter set to `initial` and bestows it.
 *
 * # Safety
 * `runtime` must be a live runtime; `out` writable.
 */
enum BstStatus bst_counter_new(const struct BstRuntime *runtime,
                               int64_t initial,
                               struct BstCounter **out);

/**
 * # Safety
 * `counter` must be NULL or a live counter.
 */
void bst_counter_free(struct BstCounter *counter);

/**
 * Adds `delta` through one delegated message, without waiting.
 *
 * # Safety
 * `counter` must be a live counter.
 */
enum BstStatus bst_counter_add(const struct BstCounter *counter, int64_t delta);

/**
 * Adds every delta in one coalesced envelope, applied in order without
 * interleaving, and waits for it.
 *
 * # Safety
 * `counter` must be a live counter; `deltas` must point to `len` values
 * (or be NULL when `len` is 0).
 */
enum BstStatus bst_counter_add_batch(const struct BstCounter *counter,
                                     const int64_t *deltas,
                                     size_t len);

/**
 * Reads the counter after every update sent before this call.
 *
 * # Safety
 * `counter` must be a live counter; `out` writable.
 */
enum BstStatus bst_counter_get(const struct BstCounter *counter, int64_t *out);

/**
 * Runs the ping-pong benchmark; `mode` is `direct`, `bestowed` or
 * `bestowed-atomic`. `*json_out` receives the report; free it with
 * [`bst_string_free`].
 *
 * # Safety
 * `options` NULL or valid; `mode` a NUL-terminated string; `json_out`
 * writable.
 */
enum BstStatus bst_bench_ping(const struct BstRuntimeOptions *options,
                              const char *mode,
                              uint64_t messages,
                              size_t runs,
                              size_t batch,
                              char **json_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BESTOW_H */
