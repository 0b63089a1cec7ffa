#pragma once

#include "bipsda/common.hpp"
#include "bipsda/rng.hpp"

#include <vector>

namespace bipsda {

struct GaussianComponent {
  double weight = 1.0;
  Vector mean;
  Matrix covariance;
};

/// Gaussian with explicit moments; the form every denoising approximation
/// takes. `isotropic_variance` is set when covariance == v * I exactly, which
/// lets samplers skip a factorization.
struct GaussianDist {
  Vector mean;
  Matrix covariance;
  double isotropic_variance = 0.0;  // 0 => general covariance

  bool isotropic() const { return isotropic_variance > 0.0; }
};

/// Finite mixture of full-covariance Gaussians.
///
/// Immutable after construction. Each component keeps its Cholesky factor,
/// explicit precision and log-determinant so that density, score and Hessian
/// evaluations are a matrix-vector product per component.
class GaussianMixture {
 public:
  /// Validates weights (positive, sum to 1 within 1e-12), dimensions, and
  /// positive definiteness of every covariance.
  explicit GaussianMixture(std::vector<GaussianComponent> components);

  Index dim() const { return dim_; }
  std::size_t size() const { return components_.size(); }
  const GaussianComponent& component(std::size_t i) const { return components_[i]; }
  const std::vector<GaussianComponent>& components() const { return components_; }
  double log_weight(std::size_t i) const { return cache_[i].log_weight; }
  const Matrix& cholesky(std::size_t i) const { return cache_[i].chol; }
  const Matrix& precision(std::size_t i) const { return cache_[i].precision; }
  double log_det(std::size_t i) const { return cache_[i].log_det; }

  double log_density(const Vector& m) const;
  double component_log_density(std::size_t i, const Vector& m) const;

  /// Posterior component probabilities at m (log-sum-exp stabilized).
  Vector responsibilities(const Vector& m) const;

  /// Gradient of log_density.
  Vector score(const Vector& m) const;
  /// Hessian of log_density; symmetric by construction.
  Matrix score_jacobian(const Vector& m) const;

  /// n i.i.d. draws as rows of an n x dim matrix.
  Matrix sample(std::size_t n, Rng& rng) const;
  void sample_one(Rng& rng, Eigen::Ref<Vector> out) const;
  std::size_t sample_component(Rng& rng) const;

  /// Convolution with N(0, sigma^2 I): same weights and means, covariances
  /// shifted by sigma^2 I. sigma == 0 returns an identical mixture.
  GaussianMixture noised(double sigma) const;

 private:
  struct Cache {
    double log_weight;
    double log_det;
    Matrix chol;       // lower factor of the covariance
    Matrix precision;  // inverse covariance
  };

  // Per-component log N(m; mu_i, Sigma_i) + log w_i, and optionally the
  // per-component gradients stacked as columns.
  void component_terms(const Vector& m, Vector& log_terms, Matrix* grads) const;

  Index dim_ = 0;
  std::vector<GaussianComponent> components_;
  std::vector<Cache> cache_;
  std::vector<double> cumulative_;
};

double gmm_log_density(const GaussianMixture& gmm, const Vector& m);
Matrix gmm_sample(const GaussianMixture& gmm, std::size_t n, Rng& rng);
GaussianMixture noisy_mixture(const GaussianMixture& gmm, double sigma);
/// Gradient of the log density of the sigma-noised mixture at m.
Vector noisy_score(const GaussianMixture& gmm, const Vector& m, double sigma);
/// Jacobian of noisy_score in m.
Matrix noisy_score_jacobian(const GaussianMixture& gmm, const Vector& m, double sigma);

/// Exact posterior of a mixture prior under y = A m + z, z ~ N(0, noise_cov).
/// Component weights are reweighted by the evidence N(y; A mu_i, A Sigma_i A^T + noise_cov).
GaussianMixture gmm_condition_linear(const GaussianMixture& gmm, const Matrix& A, const Vector& y,
                                     const Matrix& noise_cov);

/// log-sum-exp of a vector, -inf for an all -inf input.
double log_sum_exp(const Vector& v);

/// Symmetric positive-definite check via Cholesky; returns the lower factor.
Matrix cholesky_or_throw(const Matrix& spd, const char* what);

// Benchmark prior: three components in ten dimensions with weights
// (0.4, 0.3, 0.3); means -5*1, 0, 5*1; covariances I, diag(linspace(1, 2)),
// and the same spectrum under a random rotation drawn from `rotation_seed`.
inline constexpr std::uint64_t kBenchmarkRotationSeed = 0x5eed'0003'2025ULL;
GaussianMixture benchmark_prior(std::uint64_t rotation_seed = kBenchmarkRotationSeed);

/// Orthogonal matrix from QR of a seeded standard-normal matrix, with column
/// signs fixed by diag(R) > 0.
Matrix random_orthogonal(Index dim, std::uint64_t seed);

}  // namespace bipsda
