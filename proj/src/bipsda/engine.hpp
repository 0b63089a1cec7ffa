#pragma once

#include "bipsda/annealing.hpp"
#include "bipsda/common.hpp"
#include "bipsda/problems.hpp"
#include "bipsda/samplers.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bipsda {

/// The nine cells of the variant matrix: {Lang, MAP, RTO} x {ODE, TU, TC}.
const std::vector<std::string>& variant_labels();

struct VariantConfig {
  std::string label = "RTO-TU";
  DenoiseApprox denoise;
  SamplerConfig sampler;
  NoiseSchedule schedule;

  /// Parses "<sampler>-<denoise>" and fills the matching kinds; every other
  /// field keeps its default.
  static VariantConfig from_label(const std::string& label);
  /// Throws unless label, sampler kind and denoising variant agree.
  void validate() const;
};

struct SampleBatch {
  Matrix samples;  // rows are draws
  std::string method;
  int trial = -1;
  std::uint64_t master_seed = 0;
  int discard_count = 0;
  int retry_count = 0;
  double runtime_seconds = 0.0;
  bool reference = false;
  // Sampler telemetry summed over the batch.
  long mala_accepted = 0;
  long mala_proposed = 0;
  long map_degraded = 0;
  double min_lang_step = 0.0;

  Index size() const { return samples.rows(); }
  Index dim() const { return samples.cols(); }
};

/// Per-run counters folded into SampleBatch telemetry.
struct RunStats {
  long mala_accepted = 0;
  long mala_proposed = 0;
  long map_degraded = 0;
  double min_lang_step = 0.0;
};

/// Observation hooks for tests; all optional.
struct RunHooks {
  /// Called with (i, sigma(t_{i-1}), added noise) after each re-corruption.
  std::function<void(int, double, const Vector&)> on_corrupt;
  /// Called with (i, target, init, output) after each prediction step.
  std::function<void(int, const PredictionTarget&, const Vector&, const Vector&)> on_predict;
};

/// Likelihood curvature used to build MALA preconditioners,
/// M_i = curvature + C_aprx^{-1}. Averages Gauss-Newton Hessians over
/// representative prior points when the score is analytic, otherwise
/// evaluates it at the origin.
Matrix likelihood_curvature(const Problem& problem, const ScoreProvider& sp);

/// One pass of the annealing loop. Returns the final prediction-stage m(0).
/// Divergence surfaces as DivergedSampleError with the anneal index set.
Vector bipsda_run(const VariantConfig& cfg, const Problem& problem, const Vector& y, const ScoreProvider& sp, Rng& rng,
                  RunStats* stats = nullptr, const Matrix* curvature = nullptr, const RunHooks* hooks = nullptr);

struct BatchOptions {
  /// 0 means: BIPSDA_WORKERS environment variable, else hardware threads.
  int workers = 0;
  const Matrix* curvature = nullptr;
};

int default_worker_count();

/// Per-sample seed stream: attempt 0 is the first try, attempt 1 the retry.
inline std::uint64_t sample_seed(std::uint64_t master_seed, std::uint64_t index, std::uint64_t attempt = 0) {
  return derive_seed(master_seed, index, attempt);
}

/// n independent runs under per-sample derived seeds. A diverged sample is
/// retried once with a fresh seed and then discarded. Output order and bits
/// do not depend on the number of workers.
SampleBatch bipsda_batch(const VariantConfig& cfg, const Problem& problem, const Vector& y, const ScoreProvider& sp,
                         std::size_t n, std::uint64_t master_seed, const BatchOptions& opts = {});

/// Runs fn(i) for i in [0, n) over `workers` threads with dynamic scheduling.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace bipsda
