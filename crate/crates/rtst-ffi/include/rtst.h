#ifndef RTST_H
#define RTST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every FFI entry point.
 */
typedef enum RtstStatus {
  RTST_STATUS_OK = 0,
  /**
   * a required pointer argument was null
   */
  RTST_STATUS_NULL_ARGUMENT = 1,
  /**
   * an argument was not valid UTF-8
   */
  RTST_STATUS_INVALID_UTF8 = 2,
  /**
   * malformed JSON or a value that does not fit the schema
   */
  RTST_STATUS_PARSE_ERROR = 3,
  /**
   * the table or plan violates a structural invariant
   */
  RTST_STATUS_BUILD_ERROR = 4,
  /**
   * insertion refused: a same-priority overlapping flow exists
   */
  RTST_STATUS_REFUSED = 5,
  /**
   * no installed flow matches the update request
   */
  RTST_STATUS_NOT_FOUND = 6,
  /**
   * the flow (or its id) is already installed
   */
  RTST_STATUS_ALREADY_PRESENT = 7,
  /**
   * packet does not fit the schema
   */
  RTST_STATUS_PACKET_ERROR = 8,
} RtstStatus;

/**
 * Opaque engine handle.
 */
typedef struct RtstEngine RtstEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an engine from a flow table (one JSON flow per line).
 *
 * `schema_json` may be null (the 15-field 356-bit default), one of the
 * builtin names `"openflow356"` / `"fivetuple104"`, or a schema JSON
 * object. `target_k` of 0 lets the partitioner choose the group count.
 * On success `*out` owns the engine; free it with [`rtst_engine_free`].
 */
enum RtstStatus rtst_engine_build(const char *table_jsonl,
                                  const char *schema_json,
                                  uint32_t target_k,
                                  struct RtstEngine **out);

/**
 * Frees an engine handle. Null is a no-op.
 */
void rtst_engine_free(struct RtstEngine *engine);

/**
 * Classifies one packet (a JSON object with one value per field).
 *
 * On success writes a JSON result to `*out_json`:
 * `{"matched": {"flow_id": …, "priority": …, "action": …}}` or
 * `{"matched": null}`.
 */
enum RtstStatus rtst_engine_classify(const struct RtstEngine *engine,
                                     const char *packet_json,
                                     char **out_json);

/**
 * Applies one update (`{"op": "modify"|"delete"|"insert", "flow": …}`).
 *
 * Refused insertions return [`RtstStatus::Refused`] and, when
 * `out_json` is given, `{"conflicting": <flow id>}`.
 */
enum RtstStatus rtst_engine_update(struct RtstEngine *engine,
                                   const char *update_json,
                                   char **out_json);

/**
 * Writes a JSON summary report (flow count, groups, heights, memory)
 * to `*out_json`.
 */
enum RtstStatus rtst_engine_report(const struct RtstEngine *engine, char **out_json);

/**
 * Number of installed (live) flows.
 */
uint64_t rtst_engine_flow_count(const struct RtstEngine *engine);

/**
 * Frees a string returned through an out-parameter. Null is a no-op.
 */
void rtst_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RTST_H */
