#ifndef ASYSPA_LAB_H
#define ASYSPA_LAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes.
 */
typedef enum AslStatus {
  ASL_STATUS_OK = 0,
  ASL_STATUS_NULL_POINTER = 1,
  ASL_STATUS_INVALID_UTF8 = 2,
  ASL_STATUS_INVALID_PARAMETER = 3,
  ASL_STATUS_INVALID_CONFIG = 4,
  ASL_STATUS_INVALID_STATE = 5,
  ASL_STATUS_INVARIANT_VIOLATED = 6,
  ASL_STATUS_RECONSTRUCTION_FAILED = 7,
  ASL_STATUS_IO = 8,
  ASL_STATUS_FORMAT = 9,
  ASL_STATUS_NOT_RUN = 10,
  ASL_STATUS_OUT_OF_RANGE = 11,
  ASL_STATUS_PANIC = 12,
} AslStatus;

typedef enum AslTopology {
  ASL_TOPOLOGY_RING = 0,
  /**
   * Uses the `k` argument.
   */
  ASL_TOPOLOGY_RING_PLUS_K = 1,
  ASL_TOPOLOGY_EXPONENTIAL = 2,
} AslTopology;

/**
 * Opaque digraph.
 */
typedef struct AslGraph AslGraph;

/**
 * Opaque simulation: a validated config plus the output of its last run.
 */
typedef struct AslSim AslSim;

typedef struct AslBounds {
  size_t b1;
  size_t b2;
  size_t b;
} AslBounds;

typedef struct AslRunSummary {
  size_t nodes;
  size_t dim;
  uint64_t instants;
  uint64_t activations;
  uint64_t deliveries;
  double final_time;
  double max_mass_error;
} AslRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *asl_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *asl_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void asl_string_free(char *s);

/**
 * Builds a standard topology on `n` nodes.
 *
 * # Safety
 * `out_graph` must be valid.
 */
enum AslStatus asl_graph_new(enum AslTopology kind,
                             size_t n,
                             size_t k,
                             struct AslGraph **out_graph);

/**
 * Parses an edge list (`n=<count>` header, then one `src dst` pair per line).
 *
 * # Safety
 * `text` must be NUL-terminated; `out_graph` must be valid.
 */
enum AslStatus asl_graph_from_edge_list(const char *text, struct AslGraph **out_graph);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AslStatus asl_graph_node_count(const struct AslGraph *graph, size_t *out_n);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AslStatus asl_graph_is_strongly_connected(const struct AslGraph *graph, bool *out_flag);

/**
 * Serializes the graph as an edge list; free the result with `asl_string_free`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AslStatus asl_graph_edge_list(const struct AslGraph *graph, char **out_text);

/**
 * # Safety
 * `graph` must come from this library and not have been freed. Null is ignored.
 */
void asl_graph_free(struct AslGraph *graph);

/**
 * Creates a simulation from the JSON of an experiment config's `simulate` object.
 * Relative data and graph paths resolve against `base_dir` (the working
 * directory when null).
 *
 * # Safety
 * Strings must be NUL-terminated; `out_sim` must be valid.
 */
enum AslStatus asl_sim_new(const char *json,
                           const char *base_dir,
                           uint64_t seed,
                           struct AslSim **out_sim);

/**
 * Runs the simulation to completion, replacing any previous output.
 *
 * # Safety
 * `sim` must be valid.
 */
enum AslStatus asl_sim_run(struct AslSim *sim);

/**
 * Asynchrony bounds implied by the simulation's timing; available before a run.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AslStatus asl_sim_bounds(const struct AslSim *sim, struct AslBounds *out_bounds);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AslStatus asl_sim_summary(const struct AslSim *sim, struct AslRunSummary *out_summary);

/**
 * Copies node `node`'s final estimate z into `buf`, which holds `len >= dim` doubles.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum AslStatus asl_sim_node_z(const struct AslSim *sim, size_t node, double *buf, size_t len);

/**
 * Final push-sum weight y of node `node`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AslStatus asl_sim_node_y(const struct AslSim *sim, size_t node, double *out_y);

/**
 * The recorded trace as JSON lines; free the result with `asl_string_free`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AslStatus asl_sim_trace_jsonl(const struct AslSim *sim, char **out_text);

/**
 * # Safety
 * `sim` must come from this library and not have been freed. Null is ignored.
 */
void asl_sim_free(struct AslSim *sim);

/**
 * Event-index bounds for `n` nodes with the given timing constants.
 *
 * # Safety
 * `out_bounds` must be valid.
 */
enum AslStatus asl_asynchrony_bounds(size_t n,
                                     double tau_min,
                                     double tau_max,
                                     double tau_delay,
                                     struct AslBounds *out_bounds);

/**
 * Sum of the stepsizes `a..=b` for a stepsize spec given as JSON,
 * e.g. `{"kind":"power","scale":1,"alpha":0.6}`. Empty windows sum to 0.
 *
 * # Safety
 * `stepsize_json` must be NUL-terminated; `out_sum` must be valid.
 */
enum AslStatus asl_window_sum(const char *stepsize_json, uint64_t a, uint64_t b, double *out_sum);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASYSPA_LAB_H */
