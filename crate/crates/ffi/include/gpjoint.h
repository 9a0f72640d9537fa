#ifndef GPJOINT_H
#define GPJOINT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum GpjStatus {
  GPJ_STATUS_OK = 0,
  GPJ_STATUS_NULL_POINTER = 1,
  GPJ_STATUS_INVALID_UTF8 = 2,
  GPJ_STATUS_DOMAIN = 3,
  GPJ_STATUS_CONTRACT = 4,
  GPJ_STATUS_VALIDATION = 5,
  GPJ_STATUS_PARSE = 6,
  GPJ_STATUS_NUMERIC = 7,
  GPJ_STATUS_IO = 8,
  GPJ_STATUS_OUT_OF_RANGE = 9,
  GPJ_STATUS_PANIC = 10,
} GpjStatus;

/*
 Run configuration (model, priors, frailty, sampler, simulation blocks).
 */
typedef struct GpjConfig GpjConfig;

/*
 Observed data: longitudinal measurements plus survival outcomes.
 */
typedef struct GpjDataset GpjDataset;

/*
 Post-burn-in posterior draws.
 */
typedef struct GpjDraws GpjDraws;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread. Valid until the next
 failing call on the same thread; never null.
 */
const char *gpj_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *gpj_version(void);

/*
 Release a string returned by this library.

 # Safety
 `s` must come from this library and not have been freed.
 */
void gpj_string_free(char *s);

/*
 Default configuration.

 # Safety
 `out` must be a valid pointer.
 */
enum GpjStatus gpj_config_default(struct GpjConfig **out);

/*
 Parse a TOML configuration.

 # Safety
 `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GpjStatus gpj_config_from_toml(const char *toml, struct GpjConfig **out);

/*
 Set the seed of the sampler and the simulator.

 # Safety
 `cfg` must be a live handle.
 */
enum GpjStatus gpj_config_set_seed(struct GpjConfig *cfg, uint64_t seed);

/*
 Set total iterations, burn-in and adaptation length of the sampler.

 # Safety
 `cfg` must be a live handle.
 */
enum GpjStatus gpj_config_set_iterations(struct GpjConfig *cfg, size_t total_iters, size_t burn_in);

/*
 # Safety
 `cfg` must come from this library and not have been freed.
 */
void gpj_config_free(struct GpjConfig *cfg);

/*
 Load a dataset from longitudinal and survival CSV files.

 # Safety
 Paths must be NUL-terminated strings and `out` a valid pointer.
 */
enum GpjStatus gpj_dataset_load_csv(const char *longitudinal_path,
                                    const char *survival_path,
                                    struct GpjDataset **out);

/*
 Parse a dataset from in-memory CSV text.

 # Safety
 Inputs must be NUL-terminated strings and `out` a valid pointer.
 */
enum GpjStatus gpj_dataset_from_csv_text(const char *longitudinal_csv,
                                         const char *survival_csv,
                                         struct GpjDataset **out);

/*
 Simulate one dataset from the configuration's simulation block.

 # Safety
 `cfg` must be a live handle and `out` a valid pointer.
 */
enum GpjStatus gpj_dataset_simulate(const struct GpjConfig *cfg, struct GpjDataset **out);

/*
 Number of subjects, or 0 for a null handle.

 # Safety
 `ds` must be null or a live handle.
 */
size_t gpj_dataset_n_subjects(const struct GpjDataset *ds);

/*
 Fraction of censored subjects.

 # Safety
 `ds` must be a live handle and `out` a valid pointer.
 */
enum GpjStatus gpj_dataset_censoring_rate(const struct GpjDataset *ds, double *out);

/*
 # Safety
 `ds` must come from this library and not have been freed.
 */
void gpj_dataset_free(struct GpjDataset *ds);

/*
 Fit the joint model.

 # Safety
 Handles must be live and `out` a valid pointer.
 */
enum GpjStatus gpj_fit(const struct GpjDataset *ds,
                       const struct GpjConfig *cfg,
                       struct GpjDraws **out);

/*
 Number of retained draws, or 0 for a null handle.

 # Safety
 `draws` must be null or a live handle.
 */
size_t gpj_draws_n_draws(const struct GpjDraws *draws);

/*
 Number of parameter columns, or 0 for a null handle.

 # Safety
 `draws` must be null or a live handle.
 */
size_t gpj_draws_n_params(const struct GpjDraws *draws);

/*
 Name of parameter column `k`; owned by the handle. Null when out of range.

 # Safety
 `draws` must be null or a live handle.
 */
const char *gpj_draws_param_name(const struct GpjDraws *draws, size_t k);

/*
 Index of the named parameter column.

 # Safety
 `draws` must be a live handle, `name` a NUL-terminated string and `out` valid.
 */
enum GpjStatus gpj_draws_param_index(const struct GpjDraws *draws, const char *name, size_t *out);

/*
 Copy column `k` (one value per draw) into `buf`, which holds `len` doubles.

 # Safety
 `draws` must be a live handle and `buf` must hold `len` doubles.
 */
enum GpjStatus gpj_draws_copy_column(const struct GpjDraws *draws,
                                     size_t k,
                                     double *buf,
                                     size_t len);

/*
 Posterior summary as CSV text; release with [`gpj_string_free`].

 # Safety
 `draws` must be a live handle and `out` a valid pointer.
 */
enum GpjStatus gpj_draws_summary_csv(const struct GpjDraws *draws, bool relative_risk, char **out);

/*
 # Safety
 `draws` must come from this library and not have been freed.
 */
void gpj_draws_free(struct GpjDraws *draws);

/*
 GP marginal log-likelihood of one subject's series.

 # Safety
 `times` and `values` must each hold `n` doubles and `out` must be valid.
 */
enum GpjStatus gpj_gp_marginal_loglik(const double *times,
                                      const double *values,
                                      size_t n,
                                      double beta0,
                                      double kappa2,
                                      double sigma2,
                                      double rho2,
                                      double *out);

/*
 Weibull log-density with shape `tau` and log-scale `lambda`.

 # Safety
 `out` must be a valid pointer.
 */
enum GpjStatus gpj_weibull_logpdf(double t, double tau, double lambda, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPJOINT_H */
