#ifndef COSTVS_H
#define COSTVS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum CostvsStatus {
  COSTVS_STATUS_OK = 0,
  COSTVS_STATUS_NULL_POINTER = 1,
  /**
   * Bad option, model, or string argument.
   */
  COSTVS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input data failed to load or validate.
   */
  COSTVS_STATUS_DATA_ERROR = 3,
  /**
   * Rank deficiency, non-convergence, or an aborted sampler.
   */
  COSTVS_STATUS_NUMERICAL_ERROR = 4,
  /**
   * Output buffer shorter than required; the needed length is reported.
   */
  COSTVS_STATUS_BUFFER_TOO_SMALL = 5,
  COSTVS_STATUS_PANIC = 6,
} CostvsStatus;

typedef enum CostvsPriorMode {
  COSTVS_PRIOR_MODE_COST_BENEFIT = 0,
  COSTVS_PRIOR_MODE_BENEFIT_ONLY = 1,
} CostvsPriorMode;

typedef enum CostvsMethod {
  COSTVS_METHOD_LAPLACE = 0,
  COSTVS_METHOD_BIC = 1,
} CostvsMethod;

typedef enum CostvsSampler {
  COSTVS_SAMPLER_MC3_LAPLACE = 0,
  COSTVS_SAMPLER_MC3_BIC = 1,
  COSTVS_SAMPLER_RJMCMC = 2,
} CostvsSampler;

typedef struct CostvsDataset CostvsDataset;

typedef struct CostvsPrior CostvsPrior;

typedef struct CostvsTable CostvsTable;

/**
 * Score of one model. Optional fields are NaN when not defined for the method.
 */
typedef struct CostvsScore {
  /**
   * Set when the model cannot be scored (rank deficient or not converged);
   * every other field is then NaN or zero.
   */
  bool excluded;
  double score;
  double log_likelihood;
  double log_model_prior;
  double phi;
  double log_marginal;
  double cost;
  uint32_t dimension;
} CostvsScore;

/**
 * One row of an enumerated posterior, ordered by probability.
 */
typedef struct CostvsTableRow {
  /**
   * Low and high 64 bits of `sum 2^(j-1)` over included predictors `j`.
   */
  uint64_t encoding_lo;
  uint64_t encoding_hi;
  uint32_t dimension;
  double cost;
  /**
   * NaN for excluded models.
   */
  double score;
  double probability;
} CostvsTableRow;

/**
 * Sampler budget. `iterations` includes `burn_in`.
 */
typedef struct CostvsSamplerOptions {
  enum CostvsSampler sampler;
  uint64_t iterations;
  uint64_t burn_in;
  uint64_t seed;
  /**
   * Start from the full model instead of the empty one.
   */
  bool start_full;
} CostvsSamplerOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message from the most recent failed call on this thread, or null if none has
 * failed. Valid until another call on the same thread fails.
 */
const char *costvs_last_error(void);

/**
 * Library version as a static string.
 */
const char *costvs_version(void);

/**
 * Loads a data CSV (binary response first) and a `name,cost` CSV.
 */
enum CostvsStatus costvs_dataset_load(const char *data_path,
                                      const char *costs_path,
                                      struct CostvsDataset **out);

/**
 * Builds a dataset from memory. `x` is row-major `n x p` without the intercept;
 * predictors are named `X1..Xp`.
 */
enum CostvsStatus costvs_dataset_new(size_t n,
                                     size_t p,
                                     const double *y,
                                     const double *x,
                                     const double *costs,
                                     struct CostvsDataset **out);

size_t costvs_dataset_n(const struct CostvsDataset *data);

size_t costvs_dataset_p(const struct CostvsDataset *data);

void costvs_dataset_free(struct CostvsDataset *data);

/**
 * Cost prior for `data`, with the cheapest predictor as the baseline cost.
 */
enum CostvsStatus costvs_prior_new(const struct CostvsDataset *data,
                                   enum CostvsPriorMode mode,
                                   struct CostvsPrior **out);

void costvs_prior_free(struct CostvsPrior *prior);

/**
 * Normalized log prior probability of a model.
 */
enum CostvsStatus costvs_log_model_prior(const struct CostvsPrior *prior,
                                         const uint32_t *indices,
                                         size_t len,
                                         double *out);

/**
 * Scores one model.
 */
enum CostvsStatus costvs_score(const struct CostvsDataset *data,
                               const struct CostvsPrior *prior,
                               const uint32_t *indices,
                               size_t len,
                               enum CostvsMethod evidence,
                               struct CostvsScore *out);

/**
 * Exact posterior over all `2^p` models (`p <= 20`).
 */
enum CostvsStatus costvs_enumerate(const struct CostvsDataset *data,
                                   const struct CostvsPrior *prior,
                                   enum CostvsMethod evidence,
                                   struct CostvsTable **out);

size_t costvs_table_len(const struct CostvsTable *table);

/**
 * Row `i` in descending probability order.
 */
enum CostvsStatus costvs_table_row(const struct CostvsTable *table,
                                   size_t i,
                                   struct CostvsTableRow *out);

/**
 * Marginal inclusion probabilities (`p` values) from an enumerated posterior.
 */
enum CostvsStatus costvs_table_marginals(const struct CostvsTable *table,
                                         double *buf,
                                         size_t cap,
                                         size_t *len_out);

void costvs_table_free(struct CostvsTable *table);

/**
 * Runs one chain and writes the `p` marginal inclusion estimates.
 */
enum CostvsStatus costvs_sample_marginals(const struct CostvsDataset *data,
                                          const struct CostvsPrior *prior,
                                          const struct CostvsSamplerOptions *options,
                                          double *buf,
                                          size_t cap,
                                          size_t *len_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COSTVS_H */
