/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef ELIGO_H
#define ELIGO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes; the numeric values are stable.
 */
typedef enum EligoStatus {
  ELIGO_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or malformed JSON argument.
   */
  ELIGO_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Spec, data or configuration rejected.
   */
  ELIGO_STATUS_VALIDATION = 2,
  /**
   * Failure while computing or writing.
   */
  ELIGO_STATUS_RUNTIME = 3,
  /**
   * Candidate id or metric name does not exist.
   */
  ELIGO_STATUS_NOT_FOUND = 4,
  ELIGO_STATUS_PANIC = 5,
} EligoStatus;

/**
 * Evaluated results table.
 */
typedef struct EligoResults EligoResults;

/**
 * Parsed criteria specification.
 */
typedef struct EligoSpec EligoSpec;

/**
 * Loaded patient records.
 */
typedef struct EligoStore EligoStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Engine version as a static NUL-terminated string.
 */
const char *eligo_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next eligo call on the same thread.
 */
const char *eligo_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void eligo_string_free(char *s);

/**
 * Loads `patients.csv`, `events.csv`, `labs.csv` and `dictionary.json`
 * from `dir`.
 *
 * # Safety
 * `dir` must be a valid string and `out` writable.
 */
enum EligoStatus eligo_store_load(const char *dir, struct EligoStore **out);

/**
 * Generates a synthetic store. `config_json` may be null for defaults.
 *
 * # Safety
 * `config_json` must be null or a valid string; `out` writable.
 */
enum EligoStatus eligo_store_generate(const char *config_json,
                                      uint64_t seed,
                                      struct EligoStore **out);

/**
 * Writes the store in the format read by [`eligo_store_load`].
 *
 * # Safety
 * `store` must be a live handle and `dir` a valid string.
 */
enum EligoStatus eligo_store_write(const struct EligoStore *store, const char *dir);

/**
 * Number of patients, 0 for a null handle.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t eligo_store_patient_count(const struct EligoStore *store);

/**
 * # Safety
 * `store` must be null or a handle not yet freed.
 */
void eligo_store_free(struct EligoStore *store);

/**
 * Parses and validates a spec. Errors carry `line:col` in the message.
 *
 * # Safety
 * `text` must be a valid string and `out` writable.
 */
enum EligoStatus eligo_spec_parse(const char *text, struct EligoSpec **out);

/**
 * Number of candidates in the spec's grid.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum EligoStatus eligo_spec_grid_size(const struct EligoSpec *spec, uint64_t *out);

/**
 * Hex SHA-256 of the canonical spec text.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum EligoStatus eligo_spec_hash(const struct EligoSpec *spec, char **out);

/**
 * Canonical spec text.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum EligoStatus eligo_spec_canonical(const struct EligoSpec *spec, char **out);

/**
 * Spec AST as JSON.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum EligoStatus eligo_spec_to_json(const struct EligoSpec *spec, char **out);

/**
 * # Safety
 * `spec` must be null or a handle not yet freed.
 */
void eligo_spec_free(struct EligoSpec *spec);

/**
 * Evaluates every candidate. `config_json` (nullable) is an evaluation
 * config object; `threads` 0 uses all cores. Results do not depend on
 * `threads`.
 *
 * # Safety
 * Handles must be live, `config_json` null or a valid string, `out`
 * writable.
 */
enum EligoStatus eligo_evaluate(const struct EligoStore *store,
                                const struct EligoSpec *spec,
                                const char *config_json,
                                uint32_t threads,
                                struct EligoResults **out);

/**
 * Parses a results document produced by [`eligo_results_to_json`] or the CLI.
 *
 * # Safety
 * `json` must be a valid string and `out` writable.
 */
enum EligoStatus eligo_results_from_json(const char *json, struct EligoResults **out);

/**
 * Number of candidates, 0 for a null handle.
 *
 * # Safety
 * `results` must be null or a live handle.
 */
uint64_t eligo_results_len(const struct EligoResults *results);

/**
 * One outcome metric (`n`, `diversity`, `hr`, `hr_lo`, `hr_hi`, `p`,
 * `kidney_rr`, `liver_rr`). `*present` is false when the candidate has no
 * value for it; `*out` is then NaN.
 *
 * # Safety
 * `results` must be a live handle, `metric` a valid string, `out` and
 * `present` writable.
 */
enum EligoStatus eligo_results_metric(const struct EligoResults *results,
                                      uint64_t candidate_id,
                                      const char *metric,
                                      double *out,
                                      bool *present);

/**
 * Candidate status: `ok` or `degenerate:<reason>`.
 *
 * # Safety
 * `results` must be a live handle and `out` writable.
 */
enum EligoStatus eligo_results_status(const struct EligoResults *results,
                                      uint64_t candidate_id,
                                      char **out);

/**
 * Full results document as JSON, byte-identical to the CLI's output file.
 *
 * # Safety
 * `results` must be a live handle and `out` writable.
 */
enum EligoStatus eligo_results_to_json(const struct EligoResults *results, char **out);

/**
 * Results as CSV with a header row.
 *
 * # Safety
 * `results` must be a live handle and `out` writable.
 */
enum EligoStatus eligo_results_to_csv(const struct EligoResults *results, char **out);

/**
 * # Safety
 * `results` must be null or a handle not yet freed.
 */
void eligo_results_free(struct EligoResults *results);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELIGO_H */
