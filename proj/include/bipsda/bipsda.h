#ifndef BIPSDA_BIPSDA_H
#define BIPSDA_BIPSDA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  ifdef BIPSDA_BUILDING_LIBRARY
#    define BIPSDA_API __declspec(dllexport)
#  else
#    define BIPSDA_API __declspec(dllimport)
#  endif
#else
#  define BIPSDA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bipsda_status {
  BIPSDA_OK = 0,
  BIPSDA_ERR_INVALID_ARGUMENT = 1,
  BIPSDA_ERR_DIMENSION_MISMATCH = 2,
  BIPSDA_ERR_NOT_POSITIVE_DEFINITE = 3,
  BIPSDA_ERR_DIVERGED_SAMPLE = 4,
  BIPSDA_ERR_VARIANT_UNSUPPORTED = 5,
  BIPSDA_ERR_CONVERGENCE_NOT_REACHED = 6,
  BIPSDA_ERR_CONFIG = 7,
  BIPSDA_ERR_IO = 8,
  BIPSDA_ERR_INTERNAL = 99
} bipsda_status;

typedef struct bipsda_config bipsda_config;
typedef struct bipsda_summary bipsda_summary;
typedef struct bipsda_prior bipsda_prior;
typedef struct bipsda_problem bipsda_problem;
typedef struct bipsda_batch bipsda_batch;

typedef struct bipsda_metrics {
  double mean_error;
  double variance_error;
  double cmd;
  double mmd; /* squared, V-statistic */
  double alpha;
  double base_bandwidth;
} bipsda_metrics;

typedef void (*bipsda_log_fn)(const char* message, void* user);

BIPSDA_API const char* bipsda_version(void);
/* Message of the last failed call on this thread; empty after success. */
BIPSDA_API const char* bipsda_last_error(void);
BIPSDA_API const char* bipsda_status_name(bipsda_status status);
/* Frees strings returned through char** out-parameters. */
BIPSDA_API void bipsda_string_free(char* s);

/* Study configuration. */
BIPSDA_API bipsda_status bipsda_config_default(const char* study, bipsda_config** out);
BIPSDA_API bipsda_status bipsda_config_parse(const char* json_text, bipsda_config** out);
BIPSDA_API bipsda_status bipsda_config_load(const char* path, bipsda_config** out);
BIPSDA_API bipsda_status bipsda_config_set_seed(bipsda_config* cfg, uint64_t seed);
/* "desk", "paper" or a positive multiplier such as "0.5". */
BIPSDA_API bipsda_status bipsda_config_set_scale(bipsda_config* cfg, const char* scale);
BIPSDA_API bipsda_status bipsda_config_set_output_dir(bipsda_config* cfg, const char* dir);
BIPSDA_API bipsda_status bipsda_config_set_variants(bipsda_config* cfg, const char* const* labels, size_t n);
BIPSDA_API bipsda_status bipsda_config_set_workers(bipsda_config* cfg, int workers);
BIPSDA_API bipsda_status bipsda_config_to_json(const bipsda_config* cfg, char** out_json);
BIPSDA_API void bipsda_config_free(bipsda_config* cfg);

/* Runs a study and writes its artifacts under the configured output_dir.
   Trials whose reference fails to converge are dropped and counted by
   bipsda_summary_failed_trials. */
BIPSDA_API bipsda_status bipsda_study_run(const bipsda_config* cfg, bipsda_log_fn log, void* user,
                                          bipsda_summary** out);
BIPSDA_API bipsda_status bipsda_summary_json(const bipsda_summary* s, char** out_json);
BIPSDA_API size_t bipsda_summary_failed_trials(const bipsda_summary* s);
/* metric: "mean_error", "variance_error", "cmd", "mmd" or "runtime". */
BIPSDA_API bipsda_status bipsda_summary_metric(const bipsda_summary* s, const char* method, const char* metric,
                                               double* mean, double* p10, double* p90);
BIPSDA_API void bipsda_summary_free(bipsda_summary* s);

/* Reference set for one trial of a study: <out_dir>/reference.csv/.json and
   measurement.json. Returns BIPSDA_ERR_CONVERGENCE_NOT_REACHED when the
   R-hat gate fails; diagnostics are still written. */
BIPSDA_API bipsda_status bipsda_reference_generate(const bipsda_config* cfg, int trial, const char* out_dir,
                                                   double* max_rhat, double* min_ess);

/* Row-major n x dim sample buffers. alpha <= 0 estimates it from b;
   mmd_subsample 0 uses every row. */
BIPSDA_API bipsda_status bipsda_metrics_compute(const double* a, size_t na, const double* b, size_t nb, size_t dim,
                                                double alpha, size_t mmd_subsample, bipsda_metrics* out);
BIPSDA_API bipsda_status bipsda_metrics_files(const char* batch_csv, const char* reference_csv, double alpha,
                                              size_t mmd_subsample, bipsda_metrics* out);

/* mode: "coordinate_pair" (uses i, j) or "singular_pair". */
BIPSDA_API bipsda_status bipsda_plot_export(const char* study, const char* batch_csv, const char* reference_csv,
                                            const char* mode, int i, int j, const char* out_dir, const char* stem);

/* Markdown table from <results_dir>/summary.json. */
BIPSDA_API bipsda_status bipsda_report_render(const char* results_dir, char** out_text);

/* Direct sampling. */
BIPSDA_API bipsda_status bipsda_prior_benchmark(bipsda_prior** out);
BIPSDA_API void bipsda_prior_free(bipsda_prior* prior);
/* A study's forward problem with that study's default sampler settings. */
BIPSDA_API bipsda_status bipsda_problem_study(const char* study, bipsda_problem** out);
BIPSDA_API size_t bipsda_problem_dim(const bipsda_problem* p);
BIPSDA_API size_t bipsda_problem_meas_dim(const bipsda_problem* p);
/* Writes meas_dim values to y and, when non-null, dim values to m_true. */
BIPSDA_API bipsda_status bipsda_problem_simulate(const bipsda_problem* p, const bipsda_prior* prior, uint64_t seed,
                                                 double* y, double* m_true);
BIPSDA_API void bipsda_problem_free(bipsda_problem* p);

/* label: one of "Lang-ODE" ... "RTO-TC". workers 0 uses the default. */
BIPSDA_API bipsda_status bipsda_sample(const bipsda_problem* p, const bipsda_prior* prior, const double* y,
                                       const char* label, size_t n, uint64_t seed, int workers, bipsda_batch** out);
BIPSDA_API bipsda_status bipsda_reference_sample(const bipsda_problem* p, const bipsda_prior* prior, const double* y,
                                                 size_t n, uint64_t seed, bipsda_batch** out);
BIPSDA_API size_t bipsda_batch_rows(const bipsda_batch* b);
BIPSDA_API size_t bipsda_batch_cols(const bipsda_batch* b);
/* Row-major rows x cols, owned by the batch. */
BIPSDA_API const double* bipsda_batch_data(const bipsda_batch* b);
BIPSDA_API int bipsda_batch_discards(const bipsda_batch* b);
BIPSDA_API void bipsda_batch_free(bipsda_batch* b);

#ifdef __cplusplus
}
#endif

#endif
