#pragma once

#include "bipsda/common.hpp"
#include "bipsda/gmm.hpp"

#include <string>
#include <vector>

namespace bipsda {

/// Polynomial time grid t_i = T (i / N)^rho with sigma(t) = t.
class NoiseSchedule {
 public:
  NoiseSchedule(double T = 10.0, int num_steps = 200, double rho = 7.0);

  double T() const { return T_; }
  int num_steps() const { return num_steps_; }
  double rho() const { return rho_; }

  /// t_i for i in [0, N]; t(N) == T and t(0) == 0 exactly.
  double t(int i) const { return times_[static_cast<std::size_t>(i)]; }
  /// [t_N, ..., t_0], strictly decreasing.
  std::vector<double> timesteps() const;

  static double sigma(double t) { return t; }
  static double sigma_dot(double) { return 1.0; }

 private:
  double T_;
  int num_steps_;
  double rho_;
  std::vector<double> times_;  // ascending, index i holds t_i
};

/// Score of the sigma-noised prior, s(m, sigma) = grad log pi_sigma(m).
class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;
  virtual Index dim() const = 0;
  virtual void score(const Vector& m, double sigma, Vector& out) const = 0;
  virtual bool has_jacobian() const { return false; }
  virtual Matrix jacobian(const Vector& m, double sigma) const;

  Vector score(const Vector& m, double sigma) const {
    Vector out(dim());
    score(m, sigma, out);
    return out;
  }
};

/// Closed-form score of a noised Gaussian mixture.
///
/// Each component covariance is diagonalized once, Sigma_i = U diag(lambda) U^T,
/// so (Sigma_i + sigma^2 I)^{-1} costs two mat-vecs at any sigma and nothing
/// needs caching per noise level.
class AnalyticScore final : public ScoreProvider {
 public:
  explicit AnalyticScore(GaussianMixture prior);

  Index dim() const override { return prior_.dim(); }
  void score(const Vector& m, double sigma, Vector& out) const override;
  bool has_jacobian() const override { return true; }
  Matrix jacobian(const Vector& m, double sigma) const override;
  using ScoreProvider::score;

  const GaussianMixture& prior() const { return prior_; }

 private:
  struct Eig {
    Matrix u;
    Vector lambda;
  };
  // Fills log terms and whitened residual coefficients per component.
  void terms(const Vector& m, double s2, Vector& log_terms, Matrix& coeffs) const;

  GaussianMixture prior_;
  std::vector<Eig> eig_;
};

/// Score provider that always returns zero (flat prior); handy in tests.
class ZeroScore final : public ScoreProvider {
 public:
  explicit ZeroScore(Index dim) : dim_(dim) {}
  Index dim() const override { return dim_; }
  void score(const Vector&, double, Vector& out) const override { out.setZero(dim_); }
  using ScoreProvider::score;

 private:
  Index dim_;
};

enum class DenoiseVariant { kODE, kTU, kTC };

const char* to_string(DenoiseVariant v);
DenoiseVariant denoise_variant_from_string(const std::string& s);

struct DenoiseApprox {
  DenoiseVariant variant = DenoiseVariant::kTU;
  double beta_multiplier = 1.0;
  int ode_steps = 5;

  void validate() const;
};

/// m_t + sigma^2 s(m_t, sigma).
Vector tweedie_mean(const ScoreProvider& sp, const Vector& m_t, double sigma_t);

/// sigma^2 (I + sigma^2 J), symmetrized. With `clamp`, eigenvalues below
/// 1e-8 sigma^2 are lifted to that floor.
Matrix tc_covariance(const ScoreProvider& sp, const Vector& m_t, double sigma_t, bool clamp = true);

/// Euler solve of the probability-flow ODE from t to 0 in `ode_steps`
/// uniform substeps.
Vector ode_mean(const ScoreProvider& sp, const Vector& m_t, double t, int ode_steps);

/// Gaussian approximation of the denoising distribution at (m_t, t).
GaussianDist build_denoise_approx(const DenoiseApprox& cfg, const ScoreProvider& sp, const Vector& m_t, double t);

}  // namespace bipsda
