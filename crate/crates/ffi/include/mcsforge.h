/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef MCSFORGE_H
#define MCSFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call. The numeric values of `Config`,
// `Divergence` and `Io` match the command-line exit codes.
typedef enum McsfStatus {
  MCSF_STATUS_OK = 0,
  // Null pointer, bad UTF-8, undersized buffer or out-of-range index.
  MCSF_STATUS_INVALID_ARGUMENT = 1,
  MCSF_STATUS_CONFIG = 2,
  MCSF_STATUS_DIVERGENCE = 3,
  MCSF_STATUS_IO = 4,
  // An internal panic was caught at the boundary.
  MCSF_STATUS_PANIC = 5,
} McsfStatus;

// A trained or loaded adaptive agent.
typedef struct McsfAgent McsfAgent;

// A trained or loaded teammate population.
typedef struct McsfPopulation McsfPopulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *mcsf_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the buffer size needed for the full message.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t mcsf_last_error(char *buf, uintptr_t len);

// Trains a population from a JSON experiment configuration. When
// `paper_defaults_env` is non-null, population size, tolerance and baseline
// weight default to the published values for that environment.
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum McsfStatus mcsf_population_generate(const char *config_json,
                                         const char *paper_defaults_env,
                                         uint64_t seed,
                                         struct McsfPopulation **out);

// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum McsfStatus mcsf_population_load(const char *path, struct McsfPopulation **out);

// # Safety
// `pop` must be a live handle; `path` must be NUL-terminated.
enum McsfStatus mcsf_population_save(const struct McsfPopulation *pop, const char *path);

// # Safety
// `pop` must be null or a handle not yet freed.
void mcsf_population_free(struct McsfPopulation *pop);

// Population size, or 0 for a null handle.
//
// # Safety
// `pop` must be null or a live handle.
uintptr_t mcsf_population_k(const struct McsfPopulation *pop);

// Monte-Carlo cross-play returns, row-major `K x K` with row = AHT-side
// policy and column = teammate. Either output may be null.
//
// # Safety
// `pop` must be a live handle; non-null outputs must hold `len` doubles.
enum McsfStatus mcsf_population_cross_play(const struct McsfPopulation *pop,
                                           uintptr_t episodes,
                                           uint64_t seed,
                                           double *mean_out,
                                           double *stderr_out,
                                           uintptr_t len);

// Action distribution of teammate policy `index` for one observation.
//
// # Safety
// `pop` must be a live handle; `obs` must hold `obs_len` doubles and `out`
// `out_len` doubles.
enum McsfStatus mcsf_population_teammate_probs(const struct McsfPopulation *pop,
                                               uintptr_t index,
                                               const double *obs,
                                               uintptr_t obs_len,
                                               double *out,
                                               uintptr_t out_len);

// BRDiv objective of a row-major `k x k` return matrix.
//
// # Safety
// `values` must hold `k * k` doubles; `out` must be writable.
enum McsfStatus mcsf_brdiv_objective(const double *values, uintptr_t k, double alpha, double *out);

// LIPO objective of a row-major `k x k` return matrix.
//
// # Safety
// `values` must hold `k * k` doubles; `out` must be writable.
enum McsfStatus mcsf_lipo_objective(const double *values, uintptr_t k, double alpha, double *out);

// Minimum coverage sets of an environment's default scripted universe, each
// written as a bitmask over universe members. `count_out` receives the
// number of sets even when `masks_out` is too small.
//
// # Safety
// `env` must be NUL-terminated; `masks_out` must be null or hold `cap`
// values; `count_out` must be writable.
enum McsfStatus mcsf_minimal_coverage_sets(const char *env,
                                           uint64_t *masks_out,
                                           uintptr_t cap,
                                           uintptr_t *count_out);

// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum McsfStatus mcsf_agent_load(const char *path, struct McsfAgent **out);

// # Safety
// `agent` must be null or a handle not yet freed.
void mcsf_agent_free(struct McsfAgent *agent);

// Mean episodic return against every evaluation heuristic of the agent's
// environment, `meta_episodes` meta-episodes each.
//
// # Safety
// `agent` must be a live handle; `out` must be writable.
enum McsfStatus mcsf_agent_robustness(const struct McsfAgent *agent,
                                      uintptr_t meta_episodes,
                                      uint64_t seed,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCSFORGE_H */
