#pragma once

#include "bipsda/common.hpp"
#include "bipsda/gmm.hpp"
#include "bipsda/lbfgs.hpp"
#include "bipsda/problems.hpp"
#include "bipsda/rng.hpp"
#include "bipsda/small_la.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace bipsda {

/// Divergence guard shared by every sampler: non-finite or |m| > 1e8.
inline bool diverged_state(const Vector& m) { return !m.allFinite() || m.norm() > 1e8; }

/// Likelihood times the Gaussian denoising approximation:
/// pi(m) ∝ pi_like(y | m) N(m; m_aprx, C_aprx).
class PredictionTarget {
 public:
  struct Scratch {
    LikelihoodScratch like;
    Vector diff;
    Vector pd;
    Vector g_like;
  };

  PredictionTarget(const Problem& problem, Vector y, GaussianDist denoise);

  const Problem& problem() const { return *problem_; }
  const Vector& y() const { return y_; }
  const GaussianDist& denoise() const { return denoise_; }
  Index dim() const { return problem_->dim(); }
  bool isotropic() const { return denoise_.isotropic(); }
  /// Lower Cholesky factor of C_aprx (sqrt(v) I for the isotropic case).
  const Matrix& cov_chol() const { return chol_; }
  /// C_aprx^{-1}.
  const Matrix& precision() const { return precision_; }

  /// Unnormalized log density (likelihood kernel plus Gaussian quadratic),
  /// with optional gradient; allocation-free once the scratch is warm.
  double log_density_kernel(const Vector& m, Vector* grad, Scratch& s) const;

  /// Fully normalized-constant form: log_likelihood + log N(m; m_aprx, C_aprx).
  double log_density(const Vector& m) const;
  Vector grad_log_density(const Vector& m) const;

  /// Same target with a different measurement / denoising mean (RTO).
  PredictionTarget with(Vector y, Vector mean) const;

 private:
  const Problem* problem_;
  Vector y_;
  GaussianDist denoise_;
  Matrix chol_;
  Matrix precision_;
  double inv_var_ = 0.0;  // isotropic fast path
  double log_norm_ = 0.0;
};

enum class SamplerKind { kLang, kMAP, kRTO };
enum class MapSolver { kAuto, kClosedForm, kLbfgs };

const char* to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& s);
const char* to_string(MapSolver s);
MapSolver map_solver_from_string(const std::string& s);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kRTO;
  double lang_step = 5e-5;
  int lang_iters = 100;
  bool metropolis = false;
  /// ULA step is capped at lang_step_cap * lambda_min(C_aprx); 0 disables.
  double lang_step_cap = 0.1;
  std::optional<Matrix> precond;
  int lbfgs_iters = 40;
  int lbfgs_memory = 10;
  MapSolver map_solver = MapSolver::kAuto;

  void validate() const;
};

/// Euler-Maruyama Langevin: m <- m + h grad log pi(m) + sqrt(2h) xi.
/// Throws DivergedSampleError when the state leaves the finite region.
Vector ula_sample(const PredictionTarget& target, const Vector& init, double step, int iters, Rng& rng);

struct MalaResult {
  Vector state;
  long accepted = 0;
  long proposed = 0;
  double acceptance_rate() const { return proposed ? static_cast<double>(accepted) / proposed : 0.0; }
};

/// Preconditioned MALA kernel for an arbitrary log density.
///
/// Proposal m' = m + h M^{-1} g + sqrt(2h) R xi with R R^T = M^{-1}; the
/// Metropolis-Hastings ratio uses the exact asymmetric proposal density.
/// M^{-1} and R are formed explicitly so each step is a handful of small
/// dense mat-vecs.
class MalaKernel {
 public:
  MalaKernel(const Matrix& precond, double step);

  double step() const { return step_; }
  void set_step(double h);
  const Matrix& precond() const { return m_; }
  void reset_cache() { cached_for_ = nullptr; }

  /// One proposal. `logp(x, grad*)` returns the log density and fills grad.
  /// On entry lp/grad hold values at m; they are updated on acceptance.
  /// Call reset_cache() after changing m or grad outside advance().
  template <class LogP>
  bool advance(LogP&& logp, Vector& m, double& lp, Vector& grad, Rng& rng);

 private:
  Matrix m_;      // preconditioner M
  Matrix m_inv_;  // M^{-1}
  Matrix r_;      // upper factor with R R^T = M^{-1}, zeros stored
  double step_;
  Vector xi_, prop_, gprop_, d_, tmp_;
  // M^{-1} grad for the current state, keyed by the caller's grad buffer.
  Vector mig_, mig_prop_;
  const double* cached_for_ = nullptr;
};

template <class LogP>
bool MalaKernel::advance(LogP&& logp, Vector& m, double& lp, Vector& grad, Rng& rng) {
  const Index n = m.size();
  if (cached_for_ != grad.data() || mig_.size() != n) {
    mig_.resize(n);
    gemv(m_inv_, grad, 1.0, 0.0, mig_);
    cached_for_ = grad.data();
  }
  xi_.resize(n);
  prop_.resize(n);
  gprop_.resize(n);
  mig_prop_.resize(n);
  d_.resize(n);
  tmp_.resize(n);
  rng.fill_normal(xi_);
  prop_ = m + step_ * mig_;
  gemv(r_, xi_, std::sqrt(2.0 * step_), 1.0, prop_);
  const double lp_prop = logp(prop_, &gprop_);
  const double u = rng.uniform();
  if (!std::isfinite(lp_prop) || !gprop_.allFinite()) return false;
  // Reverse move residual d = m - m' - h M^{-1} g(m').
  gemv(m_inv_, gprop_, 1.0, 0.0, mig_prop_);
  d_ = m - prop_ - step_ * mig_prop_;
  gemv(m_, d_, 1.0, 0.0, tmp_);
  const double log_q_rev = -d_.dot(tmp_) / (4.0 * step_);
  const double log_q_fwd = -0.5 * xi_.squaredNorm();
  const double log_alpha = lp_prop - lp + log_q_rev - log_q_fwd;
  if (log_alpha >= 0.0 || std::log(u) < log_alpha) {
    m.swap(prop_);
    grad.swap(gprop_);
    mig_.swap(mig_prop_);
    cached_for_ = grad.data();
    lp = lp_prop;
    return true;
  }
  return false;
}

/// Runs `iters` MALA steps on a prediction target from init.
MalaResult mala_precond_sample(const PredictionTarget& target, const Vector& init, double step, int iters,
                               const Matrix& precond, Rng& rng);

/// Closed-form maximizer for a row-selection linear-Gaussian problem with an
/// isotropic denoising covariance: observed coordinates blend y and m_aprx,
/// null-space coordinates copy m_aprx.
Vector closed_form_map(const PredictionTarget& target);

/// Exact maximizer for any linear-Gaussian target (whitened normal equations).
Vector linear_gaussian_map(const PredictionTarget& target);

struct MapResult {
  Vector m;
  bool degraded = false;
  int iterations = 0;
  double grad_norm = 0.0;
};

/// L-BFGS maximization of the prediction density, solved in coordinates
/// whitened by the denoising covariance (m = m_aprx + L u).
MapResult lbfgs_map(const PredictionTarget& target, const Vector& init, int iters, int memory);

/// Maximizer by the solver the config selects (closed form where it exists).
MapResult solve_map(const PredictionTarget& target, const Vector& init, const SamplerConfig& cfg);

/// RTO draw: perturb m_aprx by N(0, C_aprx) and y by the problem's rule, then
/// solve the perturbed MAP problem.
MapResult rto_sample(const PredictionTarget& target, const Vector& init, Rng& rng, const SamplerConfig& cfg);

/// The optimization half of RTO for a given perturbed (m_aprx', y').
MapResult rto_solve(const PredictionTarget& target, const Vector& mean_perturbed, const Vector& y_perturbed,
                    const Vector& init, const SamplerConfig& cfg);

/// Prior-mode-centred points for preconditioner assembly: component means,
/// then mu_i +/- sqrt(lambda) v along principal axes in decreasing order,
/// interleaved across components, truncated to `count`.
std::vector<Vector> representative_points(const GaussianMixture& prior, std::size_t count = 32);

/// Average Gauss-Newton Hessian of the likelihood over a point set.
Matrix average_gauss_newton(const Problem& problem, const std::vector<Vector>& points);

}  // namespace bipsda
