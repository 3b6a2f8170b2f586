#ifndef SBSRL_SBSRL_H
#define SBSRL_SBSRL_H

#include <stddef.h>
#include <stdint.h>

#if defined(SBSRL_BUILDING)
#define SBSRL_API __attribute__((visibility("default")))
#else
#define SBSRL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sbsrl_status {
  SBSRL_OK = 0,
  SBSRL_E_INPUT = 1,
  SBSRL_E_NUMERICAL = 2,
  SBSRL_E_CONFIG = 3,
  SBSRL_E_RUNTIME = 4,
  SBSRL_E_BUDGET = 5,
  SBSRL_E_IO = 6
} sbsrl_status;

/* Message of the last failed call on this thread; never NULL. */
SBSRL_API const char* sbsrl_last_error(void);
SBSRL_API const char* sbsrl_version(void);
SBSRL_API const char* sbsrl_status_name(sbsrl_status status);

/* Strings returned through `char**` are owned by the caller. */
SBSRL_API void sbsrl_string_free(char* s);

/* ---- Gaussian process ------------------------------------------------- */

typedef struct sbsrl_gp sbsrl_gp;

typedef enum sbsrl_kernel_kind {
  SBSRL_KERNEL_SE = 0,
  SBSRL_KERNEL_LINEAR = 1,
  SBSRL_KERNEL_MATERN52 = 2
} sbsrl_kernel_kind;

typedef struct sbsrl_kernel {
  sbsrl_kernel_kind kind;
  const double* lengthscales; /* input_dim entries */
  size_t input_dim;
  double variance;
} sbsrl_kernel;

/* Zero prior mean. Inputs are row-major n x input_dim, targets n x output_dim. */
SBSRL_API sbsrl_status sbsrl_gp_fit(const sbsrl_kernel* kernel, size_t output_dim,
                                    double rkhs_bound, double noise_std, const double* inputs,
                                    const double* targets, size_t n, sbsrl_gp** out);
/* Row-major n x output_dim mean and stddev. */
SBSRL_API sbsrl_status sbsrl_gp_predict(const sbsrl_gp* gp, const double* queries, size_t n,
                                        double* mean, double* stddev);
SBSRL_API sbsrl_status sbsrl_gp_info_gain(const sbsrl_gp* gp, double* out);
SBSRL_API size_t sbsrl_gp_size(const sbsrl_gp* gp);
SBSRL_API void sbsrl_gp_free(sbsrl_gp* gp);

/* ---- Scalar schedules ------------------------------------------------- */

SBSRL_API sbsrl_status sbsrl_sample_budget(double delta, double exponent, int64_t cap,
                                           int64_t* m_out);
SBSRL_API sbsrl_status sbsrl_small_ball_exponent(const sbsrl_kernel* kernel, double zeta,
                                                 size_t n_draws, size_t n_grid, uint64_t seed,
                                                 double* out);
SBSRL_API sbsrl_status sbsrl_beta(double rkhs_bound, double noise_std, double delta,
                                  double gamma, int d_x, double* out);
SBSRL_API sbsrl_status sbsrl_tightening(double zeta, int d_x, int horizon, double c_max,
                                        double noise_std, double* out);
SBSRL_API sbsrl_status sbsrl_exploration_threshold(double epsilon, double noise_std,
                                                   double g_max, int horizon, double beta_n,
                                                   double* out);

typedef struct sbsrl_budget_args {
  double delta;
  double zeta;
  double rkhs_bound;
  int d_x;
  double lengthscale; /* isotropic SE kernel over d_x inputs */
  double variance;
  size_t n_draws;     /* 0 keeps the default */
  size_t n_grid;      /* 0 keeps the default */
  int use_exponent;   /* nonzero: take `exponent` as d_x (B^2/2 + phi) */
  double exponent;
} sbsrl_budget_args;

SBSRL_API void sbsrl_budget_args_init(sbsrl_budget_args* args);
/* JSON with keys M, phi_hat, zeta, delta and details; text is human-readable. */
SBSRL_API sbsrl_status sbsrl_budget_report(const sbsrl_budget_args* args, int as_json,
                                           char** out);

/* ---- Experiments ------------------------------------------------------ */

typedef struct sbsrl_experiment sbsrl_experiment;

SBSRL_API sbsrl_status sbsrl_experiment_load(const char* config_path, sbsrl_experiment** out);
SBSRL_API sbsrl_status sbsrl_experiment_parse(const char* config_text, sbsrl_experiment** out);
/* "1,2,5" or "1-5". */
SBSRL_API sbsrl_status sbsrl_experiment_set_seeds(sbsrl_experiment* ex, const char* seeds);
SBSRL_API sbsrl_status sbsrl_experiment_set_master_seed(sbsrl_experiment* ex, uint64_t seed);
SBSRL_API sbsrl_status sbsrl_experiment_set_parallelism(sbsrl_experiment* ex, int workers);
/* Seconds; 0 disables the limit. */
SBSRL_API sbsrl_status sbsrl_experiment_set_time_budget(sbsrl_experiment* ex, double seconds);
/* Writes episodes.csv, summary.json, reward.svg and cost.svg. Partial
   results are written before a failure status is returned. */
SBSRL_API sbsrl_status sbsrl_experiment_run(sbsrl_experiment* ex, const char* out_dir);
/* summary.json contents of the last run. */
SBSRL_API sbsrl_status sbsrl_experiment_summary(const sbsrl_experiment* ex, char** out);
SBSRL_API void sbsrl_experiment_free(sbsrl_experiment* ex);

typedef struct sbsrl_compare_args {
  const char* const* config_paths;
  size_t n_configs;
  int baseline;            /* nonzero adds the mean-only variant */
  const double* ablation;  /* fixed exploration thresholds */
  size_t n_ablation;
  const char* seeds;       /* NULL keeps each config's seeds */
  int has_master_seed;
  uint64_t master_seed;
  int parallelism;         /* 0 keeps the config value */
  double time_budget_s;    /* negative keeps the config value */
} sbsrl_compare_args;

SBSRL_API void sbsrl_compare_args_init(sbsrl_compare_args* args);
SBSRL_API sbsrl_status sbsrl_compare(const sbsrl_compare_args* args, const char* out_dir);

/* kind: "curves" or "bars". budget_d <= 0 reads it from summary.json. */
SBSRL_API sbsrl_status sbsrl_plot(const char* csv_path, const char* kind, const char* out_dir,
                                  double budget_d);

#ifdef __cplusplus
}
#endif

#endif
