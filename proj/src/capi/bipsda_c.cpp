#include "bipsda/bipsda.h"

#include "bipsda/harness/study.hpp"

#include <cstring>
#include <exception>
#include <new>
#include <string>
#include <vector>

using bipsda::AnalyticScore;
using bipsda::apply_scale;
using bipsda::BatchOptions;
using bipsda::benchmark_prior;
using bipsda::cmd;
using bipsda::CmdConfig;
using bipsda::ConvergenceError;
using bipsda::default_study_config;
using bipsda::Error;
using bipsda::ErrorCode;
using bipsda::estimate_alpha;
using bipsda::estimate_base_bandwidth;
using bipsda::export_projection;
using bipsda::fail;
using bipsda::GaussianMixture;
using bipsda::Index;
using bipsda::LogFn;
using bipsda::Matrix;
using bipsda::mean_error;
using bipsda::Measurement;
using bipsda::MethodSummary;
using bipsda::MetricSummary;
using bipsda::mmd;
using bipsda::MmdConfig;
using bipsda::Problem;
using bipsda::projection_mode_from_string;
using bipsda::reference_sample;
using bipsda::ReferenceDiagnostics;
using bipsda::render_report;
using bipsda::require;
using bipsda::Rng;
using bipsda::run_study;
using bipsda::SampleBatch;
using bipsda::study_config_from_json;
using bipsda::study_config_to_json;
using bipsda::study_kind_from_string;
using bipsda::study_problem;
using bipsda::study_reference;
using bipsda::StudyConfig;
using bipsda::StudyKind;
using bipsda::StudySummary;
using bipsda::summary_from_json;
using bipsda::summary_to_json;
using bipsda::TrialReference;
using bipsda::variance_error;
using bipsda::VariantConfig;
using bipsda::Vector;
namespace io = bipsda::io;

struct bipsda_config {
  StudyConfig cfg;
};

struct bipsda_summary {
  StudySummary summary;
};

struct bipsda_prior {
  GaussianMixture gmm;
};

struct bipsda_problem {
  Problem problem;
  StudyConfig defaults;
};

struct bipsda_batch {
  std::vector<double> data;  // row-major
  std::size_t rows = 0;
  std::size_t cols = 0;
  int discards = 0;
};

namespace {

thread_local std::string g_last_error;

bipsda_status set_error(bipsda_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs fn, mapping exceptions onto status codes.
template <class Fn>
bipsda_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return BIPSDA_OK;
  } catch (const Error& e) {
    return set_error(static_cast<bipsda_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return set_error(BIPSDA_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(BIPSDA_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(BIPSDA_ERR_INTERNAL, "unknown error");
  }
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorCode::kInvalidArgument, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

bipsda_batch* to_batch(const SampleBatch& b) {
  auto* out = new bipsda_batch;
  out->rows = static_cast<std::size_t>(b.samples.rows());
  out->cols = static_cast<std::size_t>(b.samples.cols());
  out->data.resize(out->rows * out->cols);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      out->data.data(), b.samples.rows(), b.samples.cols()) = b.samples;
  out->discards = b.discard_count;
  return out;
}

Matrix from_row_major(const double* p, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      p, static_cast<Index>(rows), static_cast<Index>(cols));
}

bipsda_metrics all_metrics(const Matrix& a, const Matrix& b, double alpha, std::size_t subsample) {
  bipsda_metrics m{};
  m.alpha = alpha > 0.0 ? alpha : estimate_alpha({b});
  m.base_bandwidth = estimate_base_bandwidth(b);
  m.mean_error = mean_error(a, b);
  m.variance_error = variance_error(a, b);
  m.cmd = cmd(a, b, CmdConfig{5, m.alpha});
  MmdConfig mc;
  mc.base_bandwidth = m.base_bandwidth;
  mc.subsample = subsample;
  m.mmd = mmd(a, b, mc);
  return m;
}

}  // namespace

extern "C" {

const char* bipsda_version(void) { return "1.0.0"; }

const char* bipsda_last_error(void) { return g_last_error.c_str(); }

const char* bipsda_status_name(bipsda_status status) {
  switch (status) {
    case BIPSDA_OK: return "ok";
    case BIPSDA_ERR_INVALID_ARGUMENT: return "invalid argument";
    case BIPSDA_ERR_DIMENSION_MISMATCH: return "dimension mismatch";
    case BIPSDA_ERR_NOT_POSITIVE_DEFINITE: return "not positive definite";
    case BIPSDA_ERR_DIVERGED_SAMPLE: return "diverged sample";
    case BIPSDA_ERR_VARIANT_UNSUPPORTED: return "variant unsupported";
    case BIPSDA_ERR_CONVERGENCE_NOT_REACHED: return "convergence not reached";
    case BIPSDA_ERR_CONFIG: return "config error";
    case BIPSDA_ERR_IO: return "io error";
    case BIPSDA_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void bipsda_string_free(char* s) { delete[] s; }

bipsda_status bipsda_config_default(const char* study, bipsda_config** out) {
  return guarded([&] {
    need(study, "study");
    need(out, "out");
    *out = new bipsda_config{default_study_config(study_kind_from_string(study))};
  });
}

bipsda_status bipsda_config_parse(const char* json_text, bipsda_config** out) {
  return guarded([&] {
    need(json_text, "json_text");
    need(out, "out");
    io::json j;
    try {
      j = io::json::parse(json_text);
    } catch (const io::json::parse_error& e) {
      fail(ErrorCode::kConfigError, std::string("invalid JSON: ") + e.what());
    }
    *out = new bipsda_config{study_config_from_json(j)};
  });
}

bipsda_status bipsda_config_load(const char* path, bipsda_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new bipsda_config{study_config_from_json(io::read_json(path))};
  });
}

bipsda_status bipsda_config_set_seed(bipsda_config* cfg, uint64_t seed) {
  return guarded([&] {
    need(cfg, "config");
    cfg->cfg.seed = seed;
  });
}

bipsda_status bipsda_config_set_scale(bipsda_config* cfg, const char* scale) {
  return guarded([&] {
    need(cfg, "config");
    need(scale, "scale");
    apply_scale(cfg->cfg, scale);
  });
}

bipsda_status bipsda_config_set_output_dir(bipsda_config* cfg, const char* dir) {
  return guarded([&] {
    need(cfg, "config");
    need(dir, "dir");
    require(*dir != '\0', ErrorCode::kConfigError, "output_dir must not be empty");
    cfg->cfg.output_dir = dir;
  });
}

bipsda_status bipsda_config_set_variants(bipsda_config* cfg, const char* const* labels, size_t n) {
  return guarded([&] {
    need(cfg, "config");
    if (n > 0) need(labels, "labels");
    StudyConfig next = cfg->cfg;
    next.variants.clear();
    for (size_t i = 0; i < n; ++i) {
      need(labels[i], "label");
      next.variants.emplace_back(labels[i]);
    }
    next.validate();
    cfg->cfg = std::move(next);
  });
}

bipsda_status bipsda_config_set_workers(bipsda_config* cfg, int workers) {
  return guarded([&] {
    need(cfg, "config");
    require(workers >= 0, ErrorCode::kConfigError, "workers must be nonnegative");
    cfg->cfg.workers = workers;
  });
}

bipsda_status bipsda_config_to_json(const bipsda_config* cfg, char** out_json) {
  return guarded([&] {
    need(cfg, "config");
    need(out_json, "out_json");
    *out_json = dup_string(study_config_to_json(cfg->cfg).dump(2));
  });
}

void bipsda_config_free(bipsda_config* cfg) { delete cfg; }

bipsda_status bipsda_study_run(const bipsda_config* cfg, bipsda_log_fn log, void* user, bipsda_summary** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    LogFn fn;
    if (log) fn = [log, user](const std::string& msg) { log(msg.c_str(), user); };
    *out = new bipsda_summary{run_study(cfg->cfg, fn)};
  });
}

bipsda_status bipsda_summary_json(const bipsda_summary* s, char** out_json) {
  return guarded([&] {
    need(s, "summary");
    need(out_json, "out_json");
    *out_json = dup_string(summary_to_json(s->summary).dump(2));
  });
}

size_t bipsda_summary_failed_trials(const bipsda_summary* s) { return s ? s->summary.failures.size() : 0; }

bipsda_status bipsda_summary_metric(const bipsda_summary* s, const char* method, const char* metric, double* mean,
                                    double* p10, double* p90) {
  return guarded([&] {
    need(s, "summary");
    need(method, "method");
    need(metric, "metric");
    const MethodSummary* m = s->summary.find(method);
    require(m != nullptr, ErrorCode::kInvalidArgument, std::string("no method '") + method + "' in summary");
    const std::string name = metric;
    MetricSummary v;
    if (name == "mean_error") {
      v = m->mean_error;
    } else if (name == "variance_error") {
      v = m->variance_error;
    } else if (name == "cmd") {
      v = m->cmd;
    } else if (name == "mmd") {
      v = m->mmd;
    } else if (name == "runtime") {
      v = {m->runtime_mean, m->runtime_mean - m->runtime_std, m->runtime_mean + m->runtime_std};
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown metric '" + name + "'");
    }
    if (mean) *mean = v.mean;
    if (p10) *p10 = v.p10;
    if (p90) *p90 = v.p90;
  });
}

void bipsda_summary_free(bipsda_summary* s) { delete s; }

bipsda_status bipsda_reference_generate(const bipsda_config* cfg, int trial, const char* out_dir, double* max_rhat,
                                        double* min_ess) {
  return guarded([&] {
    need(cfg, "config");
    need(out_dir, "out_dir");
    const io::fs::path dir(out_dir);
    auto report = [&](const ReferenceDiagnostics& d) {
      if (max_rhat) *max_rhat = d.max_rhat;
      if (min_ess) *min_ess = d.min_ess;
      io::write_json(dir / "reference_diagnostics.json", io::diagnostics_to_json(d));
    };
    try {
      const TrialReference r = study_reference(cfg->cfg, trial);
      report(r.result.diagnostics);
      io::write_batch(dir, "reference", r.result.batch, {{"diagnostics", io::diagnostics_to_json(r.result.diagnostics)}});
      io::write_json(dir / "measurement.json", io::measurement_to_json(r.measurement));
    } catch (const ConvergenceError& e) {
      report(e.diagnostics());
      throw;
    }
  });
}

bipsda_status bipsda_metrics_compute(const double* a, size_t na, const double* b, size_t nb, size_t dim, double alpha,
                                     size_t mmd_subsample, bipsda_metrics* out) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    require(dim > 0, ErrorCode::kInvalidArgument, "dim must be positive");
    *out = all_metrics(from_row_major(a, na, dim), from_row_major(b, nb, dim), alpha, mmd_subsample);
  });
}

bipsda_status bipsda_metrics_files(const char* batch_csv, const char* reference_csv, double alpha,
                                   size_t mmd_subsample, bipsda_metrics* out) {
  return guarded([&] {
    need(batch_csv, "batch_csv");
    need(reference_csv, "reference_csv");
    need(out, "out");
    *out = all_metrics(io::read_matrix_csv(batch_csv), io::read_matrix_csv(reference_csv), alpha, mmd_subsample);
  });
}

bipsda_status bipsda_plot_export(const char* study, const char* batch_csv, const char* reference_csv, const char* mode,
                                 int i, int j, const char* out_dir, const char* stem) {
  return guarded([&] {
    need(study, "study");
    need(batch_csv, "batch_csv");
    need(reference_csv, "reference_csv");
    need(mode, "mode");
    need(out_dir, "out_dir");
    need(stem, "stem");
    const Problem problem = study_problem(study_kind_from_string(study));
    const SampleBatch b = io::read_batch(batch_csv);
    const Matrix ref = io::read_matrix_csv(reference_csv);
    export_projection(b.samples, ref, problem, projection_mode_from_string(mode), out_dir, stem, i, j,
                      b.method.empty() ? "method" : b.method);
  });
}

bipsda_status bipsda_report_render(const char* results_dir, char** out_text) {
  return guarded([&] {
    need(results_dir, "results_dir");
    need(out_text, "out_text");
    const StudySummary s = summary_from_json(io::read_json(io::fs::path(results_dir) / "summary.json"));
    *out_text = dup_string(render_report(s));
  });
}

bipsda_status bipsda_prior_benchmark(bipsda_prior** out) {
  return guarded([&] {
    need(out, "out");
    *out = new bipsda_prior{benchmark_prior()};
  });
}

void bipsda_prior_free(bipsda_prior* prior) { delete prior; }

bipsda_status bipsda_problem_study(const char* study, bipsda_problem** out) {
  return guarded([&] {
    need(study, "study");
    need(out, "out");
    const StudyKind kind = study_kind_from_string(study);
    *out = new bipsda_problem{study_problem(kind), default_study_config(kind)};
  });
}

size_t bipsda_problem_dim(const bipsda_problem* p) { return p ? static_cast<size_t>(p->problem.dim()) : 0; }

size_t bipsda_problem_meas_dim(const bipsda_problem* p) { return p ? static_cast<size_t>(p->problem.meas_dim()) : 0; }

bipsda_status bipsda_problem_simulate(const bipsda_problem* p, const bipsda_prior* prior, uint64_t seed, double* y,
                                      double* m_true) {
  return guarded([&] {
    need(p, "problem");
    need(prior, "prior");
    need(y, "y");
    Rng rng(seed);
    const Measurement m = p->problem.simulate(prior->gmm, rng);
    Eigen::Map<Vector>(y, m.y.size()) = m.y;
    if (m_true) Eigen::Map<Vector>(m_true, m.m_true.size()) = m.m_true;
  });
}

void bipsda_problem_free(bipsda_problem* p) { delete p; }

bipsda_status bipsda_sample(const bipsda_problem* p, const bipsda_prior* prior, const double* y, const char* label,
                            size_t n, uint64_t seed, int workers, bipsda_batch** out) {
  return guarded([&] {
    need(p, "problem");
    need(prior, "prior");
    need(y, "y");
    need(label, "label");
    need(out, "out");
    const VariantConfig v = p->defaults.variant(label);
    const AnalyticScore sp(prior->gmm);
    const Vector yv = Eigen::Map<const Vector>(y, p->problem.meas_dim());
    *out = to_batch(bipsda::bipsda_batch(v, p->problem, yv, sp, n, seed, BatchOptions{workers, nullptr}));
  });
}

bipsda_status bipsda_reference_sample(const bipsda_problem* p, const bipsda_prior* prior, const double* y, size_t n,
                                      uint64_t seed, bipsda_batch** out) {
  return guarded([&] {
    need(p, "problem");
    need(prior, "prior");
    need(y, "y");
    need(out, "out");
    const Vector yv = Eigen::Map<const Vector>(y, p->problem.meas_dim());
    *out = to_batch(reference_sample(prior->gmm, p->problem, yv, n, seed, p->defaults.reference).batch);
  });
}

size_t bipsda_batch_rows(const bipsda_batch* b) { return b ? b->rows : 0; }

size_t bipsda_batch_cols(const bipsda_batch* b) { return b ? b->cols : 0; }

const double* bipsda_batch_data(const bipsda_batch* b) { return b ? b->data.data() : nullptr; }

int bipsda_batch_discards(const bipsda_batch* b) { return b ? b->discards : 0; }

void bipsda_batch_free(bipsda_batch* b) { delete b; }

}  // extern "C"
