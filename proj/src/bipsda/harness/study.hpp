#pragma once

#include "bipsda/engine.hpp"
#include "bipsda/harness/io.hpp"
#include "bipsda/metrics.hpp"
#include "bipsda/reference.hpp"

#include <functional>
#include <string>
#include <vector>

namespace bipsda {

enum class StudyKind { kInpaintingLow, kInpaintingHigh, kXray, kPhaseRetrieval };

const char* to_string(StudyKind s);
StudyKind study_kind_from_string(const std::string& s);

struct StudyConfig {
  StudyKind study = StudyKind::kInpaintingLow;
  std::vector<std::string> variants;
  int n_trials = 20;
  int n_samples = 5000;
  std::uint64_t seed = 2025;
  std::string output_dir = "results";
  double trial_scale = 1.0;
  double sample_scale = 1.0;
  int workers = 0;
  bool write_samples = true;

  // Shared variant settings; defaults depend on the study.
  SamplerConfig sampler;
  DenoiseApprox denoise;
  double schedule_T = 10.0;
  int schedule_steps = 200;
  double schedule_rho = 7.0;

  ReferenceConfig reference;
  int cmd_order = 5;
  int num_bandwidths = 5;
  std::size_t mmd_subsample = 10000;

  /// Trials and samples after the scale multipliers.
  int effective_trials() const;
  int effective_samples() const;
  void validate() const;
  VariantConfig variant(const std::string& label) const;
};

/// Desk-scale defaults for a study (trial/sample counts and sampler settings).
StudyConfig default_study_config(StudyKind study);

/// Parses a config JSON over the study's defaults. Unknown keys and invalid
/// values raise ErrorCode::kConfigError.
StudyConfig study_config_from_json(const io::json& j);
io::json study_config_to_json(const StudyConfig& cfg);
/// Applies a CLI scale: "paper" (100 x 10000), "desk" (defaults) or a numeric
/// multiplier on both counts.
void apply_scale(StudyConfig& cfg, const std::string& scale);

Problem study_problem(StudyKind study);

struct TrialReport {
  int trial = 0;
  std::string method;
  double mean_error = 0.0;
  double variance_error = 0.0;
  double cmd = 0.0;
  double mmd = 0.0;
  int discard_count = 0;
  int retry_count = 0;
  double base_bandwidth = 0.0;
  double runtime_seconds = 0.0;
};

struct MetricSummary {
  double mean = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
};

struct MethodSummary {
  std::string method;
  int n_trials = 0;
  MetricSummary mean_error, variance_error, cmd, mmd;
  double runtime_mean = 0.0;
  double runtime_std = 0.0;
  long discards = 0;
  long retries = 0;
};

struct TrialFailure {
  int trial = 0;
  std::string reason;
};

struct StudySummary {
  std::string study;
  int n_trials = 0;
  int n_samples = 0;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  double base_bandwidth_mean = 0.0;
  std::vector<MethodSummary> methods;  // config order, then "Reference"
  std::vector<TrialFailure> failures;
  std::vector<TrialReport> reports;

  const MethodSummary* find(const std::string& method) const;
};

/// Linear-interpolation (type 7) quantile, p in [0, 1].
double quantile7(std::vector<double> values, double p);

/// Per-method means and interdecile ranges, methods sorted by name.
std::vector<MethodSummary> summarize(const std::vector<TrialReport>& reports);

using LogFn = std::function<void(const std::string&)>;

/// The full protocol: per trial a measurement, two independent reference
/// sets, every variant's batch and the four metrics. Writes config.json,
/// trial_reports.csv, summary.json, runtimes.json,
/// reference_diagnostics.json and, when enabled, samples/. A reference
/// convergence failure drops that trial and is listed in the summary.
StudySummary run_study(const StudyConfig& cfg, const LogFn& log = {});

io::json summary_to_json(const StudySummary& s);
StudySummary summary_from_json(const io::json& j);

/// Text table of a summary: mean and (p10, p90) per metric and method.
std::string render_report(const StudySummary& s);

struct RuntimeRow {
  std::string method;
  double mean = 0.0;
  double std = 0.0;
  int n = 0;
};

/// Wall-clock seconds per bipsda_batch across trials, without references
/// or metrics.
std::vector<RuntimeRow> benchmark_runtime(const StudyConfig& cfg);

/// One trial's reference generation alone (CLI `reference`).
struct TrialReference {
  Measurement measurement;
  ReferenceResult result;
};
TrialReference study_reference(const StudyConfig& cfg, int trial);

enum class ProjectionMode { kCoordinatePair, kSingularPair };
ProjectionMode projection_mode_from_string(const std::string& s);

/// D x 2 projection. coordinate_pair uses unit vectors (i, j); singular_pair
/// uses the right singular vectors of the operator with the largest and
/// smallest singular values.
Matrix projection_matrix(const Problem& problem, ProjectionMode mode, int i = 0, int j = 1);

/// Writes <stem>_method.csv, <stem>_reference.csv and <stem>.svg.
Matrix export_projection(const Matrix& batch, const Matrix& reference, const Problem& problem, ProjectionMode mode,
                         const io::fs::path& out_dir, const std::string& stem, int i = 0, int j = 1,
                         const std::string& method_label = "method");

}  // namespace bipsda
