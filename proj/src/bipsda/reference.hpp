#pragma once

#include "bipsda/common.hpp"
#include "bipsda/diagnostics.hpp"
#include "bipsda/engine.hpp"
#include "bipsda/gmm.hpp"
#include "bipsda/problems.hpp"

#include <cstdint>
#include <vector>

namespace bipsda {

/// Evidence-weighted mixture weights w_i Z_i / sum_j w_j Z_j.
struct ComponentWeightEstimate {
  Vector log_weights;         // log w_i + log Z_i (unnormalized)
  Vector normalized_weights;  // simplex
  Vector importance_ess;      // Kish ESS of each component's importance weights

  static ComponentWeightEstimate from_log_weights(Vector log_weights);
};

struct ReferenceConfig {
  int chains = 8;
  long iterations = 100000;
  double burn_in = 0.5;
  double initial_step = 0.5;
  double target_accept = 0.574;
  long importance_draws = 1000000;
  double rhat_gate = 1.01;
  /// Components whose estimated weight falls below this are not sampled.
  double min_weight = 1e-10;
  /// Period of the m -> -m reflection move on sign-symmetric likelihoods;
  /// 0 disables it.
  int reflection_every = 10;
  int workers = 0;

  void validate() const;
};

struct ComponentDiagnostics {
  std::size_t component = 0;
  bool sampled = false;
  Vector rhat;
  Vector ess;
  double acceptance = 0.0;
  double reflection_acceptance = 0.0;
  std::vector<double> steps;  // adapted step per chain
};

struct ReferenceDiagnostics {
  ComponentWeightEstimate weights;
  std::vector<ComponentDiagnostics> components;
  Vector rhat;  // per-dimension max over sampled components
  Vector ess;   // per-dimension min over sampled components
  double max_rhat = 0.0;
  double min_ess = 0.0;
  bool exact = false;
};

struct ReferenceResult {
  SampleBatch batch;
  ReferenceDiagnostics diagnostics;
};

/// Thrown when the R-hat gate fails; carries the diagnostics that failed it.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, ReferenceDiagnostics diag)
      : Error(ErrorCode::kConvergenceNotReached, what), diag_(std::move(diag)) {}
  const ReferenceDiagnostics& diagnostics() const noexcept { return diag_; }

 private:
  ReferenceDiagnostics diag_;
};

/// i.i.d. draws from the closed-form mixture posterior of a linear-Gaussian
/// problem.
ReferenceResult exact_posterior_sample(const GaussianMixture& prior, const Problem& problem, const Vector& y,
                                       std::size_t n, std::uint64_t seed);

/// Component-wise preconditioned MALA reference. Each prior component's
/// tilted posterior is sampled on its own, weighted by an importance-sampled
/// evidence estimate, and pooled. Throws ConvergenceError when any sampled
/// component has R-hat at or above the gate.
ReferenceResult reference_mcmc(const GaussianMixture& prior, const Problem& problem, const Vector& y, std::size_t n,
                               std::uint64_t seed, const ReferenceConfig& cfg = {});

/// Exact sampler for linear problems, MCMC otherwise.
ReferenceResult reference_sample(const GaussianMixture& prior, const Problem& problem, const Vector& y,
                                 std::size_t n, std::uint64_t seed, const ReferenceConfig& cfg = {});

/// log Z_i = log E_{N(mu_i, Sigma_i)}[pi_like(y | m)] by importance sampling
/// from the defensive mixture 0.5 N(mu_i, Sigma_i) + 0.5 N(center, cov).
/// Returns the log evidence and writes the Kish ESS of the weights.
double component_log_evidence(const GaussianComponent& comp, const Problem& problem, const Vector& y,
                              const Vector& center, const Matrix& cov, long draws, std::uint64_t seed,
                              double* kish_ess = nullptr);

}  // namespace bipsda
