#ifndef HTGCFD_H
#define HTGCFD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every fallible entry point.
typedef enum HtgcfdStatus {
  HTGCFD_STATUS_OK = 0,
  HTGCFD_STATUS_NULL_POINTER = 1,
  HTGCFD_STATUS_INVALID_UTF8 = 2,
  HTGCFD_STATUS_INVALID_CONFIG = 3,
  HTGCFD_STATUS_IO = 4,
  HTGCFD_STATUS_DATA = 5,
  HTGCFD_STATUS_NUMERIC = 6,
  HTGCFD_STATUS_OUT_OF_RANGE = 7,
  HTGCFD_STATUS_PANIC = 8,
} HtgcfdStatus;

// The trade graph of one region.
typedef struct HtgcfdGraph HtgcfdGraph;

// Trained parameters restored from a checkpoint.
typedef struct HtgcfdModel HtgcfdModel;

// Regions loaded from a run configuration.
typedef struct HtgcfdRegions HtgcfdRegions;

// Test-set style metrics. `auc` is meaningful only when `auc_defined` is
// true, which requires both classes among the scored nodes.
typedef struct HtgcfdMetrics {
  double recall;
  double auc;
  double f1;
  bool auc_defined;
} HtgcfdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread; do not free it.
const char *htgcfd_last_error(void);

// Library version as a static NUL-terminated string.
const char *htgcfd_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void htgcfd_string_free(char *s);

// Loads the data described by a TOML run configuration.
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out` must be writable.
enum HtgcfdStatus htgcfd_regions_load(const char *config_toml, struct HtgcfdRegions **out);

// Number of regions held, or 0 for NULL.
//
// # Safety
// `regions` must be NULL or a live handle.
size_t htgcfd_regions_count(const struct HtgcfdRegions *regions);

// Region id at `index`, or 0 when out of range.
//
// # Safety
// `regions` must be NULL or a live handle.
uint32_t htgcfd_regions_id(const struct HtgcfdRegions *regions, size_t index);

// # Safety
// `regions` must be NULL or a handle not yet freed.
void htgcfd_regions_free(struct HtgcfdRegions *regions);

// Builds the trade graph of the region at `index`.
//
// # Safety
// `regions` must be a live handle; `out` must be writable.
enum HtgcfdStatus htgcfd_graph_build(const struct HtgcfdRegions *regions,
                                     size_t index,
                                     struct HtgcfdGraph **out);

// Number of transaction nodes, or 0 for NULL.
//
// # Safety
// `graph` must be NULL or a live handle.
size_t htgcfd_graph_num_transactions(const struct HtgcfdGraph *graph);

// # Safety
// `graph` must be NULL or a handle not yet freed.
void htgcfd_graph_free(struct HtgcfdGraph *graph);

// Restores a model from a `theta_task{l}.ckpt` file. Layer sizes come from
// the checkpoint; the attention slope and activation take their defaults.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HtgcfdStatus htgcfd_model_load(const char *path, struct HtgcfdModel **out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void htgcfd_model_free(struct HtgcfdModel *model);

// Writes the fraud probability of every transaction node into `out`, which
// must hold `len` doubles with `len` equal to the node count.
//
// # Safety
// Handles must be live; `out` must point to `len` writable doubles.
enum HtgcfdStatus htgcfd_predict(const struct HtgcfdModel *model,
                                 const struct HtgcfdGraph *graph,
                                 double *out,
                                 size_t len);

// Scores every transaction node of `graph` and compares against its labels.
//
// # Safety
// Handles must be live; `out` must be writable.
enum HtgcfdStatus htgcfd_evaluate(const struct HtgcfdModel *model,
                                  const struct HtgcfdGraph *graph,
                                  double threshold,
                                  struct HtgcfdMetrics *out);

// Runs the sequential protocol described by a TOML run configuration with
// its first configured variant and returns the metrics report as JSON.
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out_json` must be
// writable. Free the result with [`htgcfd_string_free`].
enum HtgcfdStatus htgcfd_run_sequence(const char *config_toml, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HTGCFD_H */
