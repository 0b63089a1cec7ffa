#pragma once

#include "bipsda/common.hpp"
#include "bipsda/gmm.hpp"
#include "bipsda/rng.hpp"

#include <string>
#include <vector>

namespace bipsda {

enum class ProblemKind { kLinearGaussian, kPhaseRetrieval, kPoissonXray };

const char* to_string(ProblemKind kind);
ProblemKind problem_kind_from_string(const std::string& s);

inline constexpr std::uint64_t kPhaseRetrievalSeed = 0x5eed'0b0b'2025ULL;
inline constexpr std::uint64_t kXraySeed = 0x5eed'0c0c'2025ULL;

struct Measurement {
  Vector y;
  Vector m_true;
  std::uint64_t trial_seed = 0;
};

/// Scratch for allocation-free likelihood evaluation inside sampler loops.
struct LikelihoodScratch {
  Vector fm;
  Vector r;
};

/// One of the three likelihood families: y = A m + tau z, y = (B m)^2 + tau z,
/// or y ~ Poisson(I0 exp(-C m)).
///
/// Gaussian log-likelihoods drop their additive constant, so a perfect fit
/// evaluates to 0. The Poisson log-likelihood keeps -log(y!) through lgamma.
class Problem {
 public:
  /// General linear-Gaussian problem with dense operator A.
  static Problem linear(Matrix A, double tau);
  /// Row-selection operator keeping `kept` coordinates of a dim-vector.
  static Problem inpainting(double tau, const std::vector<int>& kept, Index dim);
  static Problem phase_retrieval(std::uint64_t seed = kPhaseRetrievalSeed, double tau = 25.0);
  static Problem xray(std::uint64_t seed = kXraySeed, double intensity = 1000.0);
  /// Rebuild from stored fields (deserialization); validates invariants.
  static Problem from_parts(ProblemKind kind, Matrix op, double tau, double intensity, std::uint64_t seed,
                            std::vector<int> kept);

  ProblemKind kind() const { return kind_; }
  Index dim() const { return op_.cols(); }
  Index meas_dim() const { return op_.rows(); }
  const Matrix& op() const { return op_; }
  double tau() const { return tau_; }
  double intensity() const { return intensity_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<int>& kept() const { return kept_; }
  /// True when the operator is a row selection (A A^T = I).
  bool is_selection() const { return !kept_.empty(); }
  bool is_gaussian() const { return kind_ != ProblemKind::kPoissonXray; }

  Vector forward(const Vector& m) const;
  /// Jacobian of the forward model at m (meas_dim x dim).
  Matrix jacobian(const Vector& m) const;

  /// Validates y (shape; nonnegative integer counts for Poisson).
  void check_measurement(const Vector& y) const;
  double log_likelihood(const Vector& m, const Vector& y) const;
  Vector grad_log_likelihood(const Vector& m, const Vector& y) const;
  /// log-likelihood without y-only constants, optional gradient, no
  /// allocation once the scratch is sized. Accepts real-valued y for Poisson
  /// (perturbed RTO measurements).
  double log_likelihood_kernel(const Vector& m, const Vector& y, Vector* grad, LikelihoodScratch& s) const;
  /// Constant separating log_likelihood from log_likelihood_kernel.
  double log_likelihood_constant(const Vector& y) const;

  /// J^T W J with W = I / tau^2 (Gaussian) or diag(1/f) (Poisson Fisher).
  Matrix gauss_newton_hessian(const Vector& m, const Vector& y) const;
  void add_gauss_newton_hessian(const Vector& m, double scale, Matrix& acc) const;

  Vector simulate_y(const Vector& m, Rng& rng) const;
  Measurement simulate(const GaussianMixture& prior, Rng& rng) const;

  /// RTO measurement perturbation: y + tau xi for Gaussian noise,
  /// max(0, y + sqrt(max(y, 1)) xi) for Poisson counts.
  Vector perturb_measurement(const Vector& y, Rng& rng) const;

  /// Monte Carlo SNR in dB: 10 log10(E|f(m)|^2 / E|y - f(m)|^2).
  double snr_db(const GaussianMixture& prior, std::size_t n, Rng& rng) const;

 private:
  Problem() = default;

  ProblemKind kind_ = ProblemKind::kLinearGaussian;
  Matrix op_;
  double tau_ = 1.0;
  double intensity_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<int> kept_;
};

/// Inpainting of the 10-dim benchmark: keeps 8 distinct coordinates.
Problem make_inpainting(double tau, const std::vector<int>& kept = {0, 1, 2, 3, 4, 5, 6, 7});
Problem make_phase_retrieval(std::uint64_t seed = kPhaseRetrievalSeed);
Problem make_xray(std::uint64_t seed = kXraySeed);

}  // namespace bipsda
