#include "bipsda/samplers.hpp"

#include <cmath>

namespace bipsda {

PredictionTarget::PredictionTarget(const Problem& problem, Vector y, GaussianDist denoise)
    : problem_(&problem), y_(std::move(y)), denoise_(std::move(denoise)) {
  const Index d = problem.dim();
  require_dim(y_.size(), problem.meas_dim(), "measurement");
  require(y_.allFinite(), ErrorCode::kInvalidArgument, "measurement has non-finite entries");
  require_dim(denoise_.mean.size(), d, "denoising mean");
  require(denoise_.mean.allFinite(), ErrorCode::kInvalidArgument, "denoising mean is not finite");
  if (denoise_.isotropic()) {
    const double v = denoise_.isotropic_variance;
    inv_var_ = 1.0 / v;
    chol_ = std::sqrt(v) * Matrix::Identity(d, d);
    precision_ = inv_var_ * Matrix::Identity(d, d);
    if (denoise_.covariance.size() == 0) denoise_.covariance = v * Matrix::Identity(d, d);
    log_norm_ = -0.5 * (static_cast<double>(d) * (kLog2Pi + std::log(v)));
  } else {
    require_dim(denoise_.covariance.rows(), d, "denoising covariance rows");
    require_dim(denoise_.covariance.cols(), d, "denoising covariance cols");
    chol_ = cholesky_or_throw(denoise_.covariance, "denoising covariance");
    const Matrix linv = chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
    precision_ = linv.transpose() * linv;
    precision_ = (0.5 * (precision_ + precision_.transpose())).eval();
    log_norm_ = -0.5 * (static_cast<double>(d) * kLog2Pi) - chol_.diagonal().array().log().sum();
  }
}

double PredictionTarget::log_density_kernel(const Vector& m, Vector* grad, Scratch& s) const {
  s.diff.resize(m.size());
  s.diff.noalias() = m - denoise_.mean;
  double quad;
  if (grad) {
    s.g_like.resize(m.size());
    const double like = problem_->log_likelihood_kernel(m, y_, &s.g_like, s.like);
    if (inv_var_ > 0.0) {
      quad = s.diff.squaredNorm() * inv_var_;
      grad->noalias() = s.g_like - inv_var_ * s.diff;
    } else {
      s.pd.resize(m.size());
      gemv(precision_, s.diff, 1.0, 0.0, s.pd);
      quad = s.diff.dot(s.pd);
      grad->noalias() = s.g_like - s.pd;
    }
    return like - 0.5 * quad;
  }
  const double like = problem_->log_likelihood_kernel(m, y_, nullptr, s.like);
  if (inv_var_ > 0.0) {
    quad = s.diff.squaredNorm() * inv_var_;
  } else {
    s.pd.resize(m.size());
    gemv(precision_, s.diff, 1.0, 0.0, s.pd);
    quad = s.diff.dot(s.pd);
  }
  return like - 0.5 * quad;
}

double PredictionTarget::log_density(const Vector& m) const {
  require_dim(m.size(), dim(), "parameter");
  Scratch s;
  return log_density_kernel(m, nullptr, s) + problem_->log_likelihood_constant(y_) + log_norm_;
}

Vector PredictionTarget::grad_log_density(const Vector& m) const {
  require_dim(m.size(), dim(), "parameter");
  Scratch s;
  Vector g(dim());
  log_density_kernel(m, &g, s);
  return g;
}

PredictionTarget PredictionTarget::with(Vector y, Vector mean) const {
  require_dim(y.size(), y_.size(), "perturbed measurement");
  require_dim(mean.size(), denoise_.mean.size(), "perturbed mean");
  PredictionTarget out = *this;
  out.y_ = std::move(y);
  out.denoise_.mean = std::move(mean);
  return out;
}

const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::kLang: return "Lang";
    case SamplerKind::kMAP: return "MAP";
    case SamplerKind::kRTO: return "RTO";
  }
  return "?";
}

SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "Lang") return SamplerKind::kLang;
  if (s == "MAP") return SamplerKind::kMAP;
  if (s == "RTO") return SamplerKind::kRTO;
  fail(ErrorCode::kInvalidArgument, "unknown sampler kind '" + s + "'");
}

const char* to_string(MapSolver s) {
  switch (s) {
    case MapSolver::kAuto: return "auto";
    case MapSolver::kClosedForm: return "closed_form";
    case MapSolver::kLbfgs: return "lbfgs";
  }
  return "?";
}

MapSolver map_solver_from_string(const std::string& s) {
  if (s == "auto") return MapSolver::kAuto;
  if (s == "closed_form") return MapSolver::kClosedForm;
  if (s == "lbfgs") return MapSolver::kLbfgs;
  fail(ErrorCode::kInvalidArgument, "unknown MAP solver '" + s + "'");
}

void SamplerConfig::validate() const {
  require(lang_step > 0.0 && std::isfinite(lang_step), ErrorCode::kInvalidArgument, "lang_step must be positive");
  require(lang_iters >= 1, ErrorCode::kInvalidArgument, "lang_iters must be positive");
  require(lang_step_cap >= 0.0, ErrorCode::kInvalidArgument, "lang_step_cap must be non-negative");
  require(lbfgs_iters >= 1, ErrorCode::kInvalidArgument, "lbfgs_iters must be positive");
  require(lbfgs_memory >= 1, ErrorCode::kInvalidArgument, "lbfgs_memory must be positive");
  if (precond) cholesky_or_throw(*precond, "preconditioner");
}

Vector ula_sample(const PredictionTarget& target, const Vector& init, double step, int iters, Rng& rng) {
  require(step > 0.0 && std::isfinite(step), ErrorCode::kInvalidArgument, "Langevin step must be positive");
  require(iters >= 0, ErrorCode::kInvalidArgument, "Langevin iteration count must be non-negative");
  require_dim(init.size(), target.dim(), "Langevin init");
  const Index d = init.size();
  Vector m = init, g(d), xi(d);
  PredictionTarget::Scratch s;
  const double noise = std::sqrt(2.0 * step);
  for (int it = 0; it < iters; ++it) {
    target.log_density_kernel(m, &g, s);
    rng.fill_normal(xi);
    m.noalias() += step * g;
    m.noalias() += noise * xi;
    if (diverged_state(m)) throw DivergedSampleError(it, "unadjusted Langevin state diverged");
  }
  return m;
}

MalaKernel::MalaKernel(const Matrix& precond, double step) : m_(precond), step_(step) {
  set_step(step);
  m_ = (0.5 * (m_ + m_.transpose())).eval();
  const Matrix l = cholesky_or_throw(m_, "MALA preconditioner");
  const Index d = m_.rows();
  const Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  r_ = linv.transpose();
  m_inv_ = r_ * r_.transpose();
  m_inv_ = (0.5 * (m_inv_ + m_inv_.transpose())).eval();
}

void MalaKernel::set_step(double h) {
  require(h > 0.0 && std::isfinite(h), ErrorCode::kInvalidArgument, "MALA step must be positive");
  step_ = h;
}

MalaResult mala_precond_sample(const PredictionTarget& target, const Vector& init, double step, int iters,
                               const Matrix& precond, Rng& rng) {
  require(iters >= 0, ErrorCode::kInvalidArgument, "MALA iteration count must be non-negative");
  require_dim(init.size(), target.dim(), "MALA init");
  require_dim(precond.rows(), target.dim(), "preconditioner");
  MalaKernel kernel(precond, step);
  PredictionTarget::Scratch s;
  auto logp = [&](const Vector& x, Vector* g) { return target.log_density_kernel(x, g, s); };
  MalaResult res;
  res.state = init;
  Vector grad(init.size());
  double lp = logp(res.state, &grad);
  require(std::isfinite(lp) && grad.allFinite(), ErrorCode::kInvalidArgument, "MALA init has non-finite density");
  for (int it = 0; it < iters; ++it) {
    if (kernel.advance(logp, res.state, lp, grad, rng)) ++res.accepted;
    ++res.proposed;
  }
  return res;
}

Vector closed_form_map(const PredictionTarget& target) {
  const Problem& p = target.problem();
  require(p.kind() == ProblemKind::kLinearGaussian && p.is_selection(), ErrorCode::kInvalidArgument,
          "closed-form MAP needs a row-selection linear-Gaussian problem");
  require(target.isotropic(), ErrorCode::kInvalidArgument, "closed-form MAP needs an isotropic denoising covariance");
  const double v = target.denoise().isotropic_variance;
  const double w = v / (v + p.tau() * p.tau());
  Vector m = target.denoise().mean;
  const auto& kept = p.kept();
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const Index k = kept[r];
    m[k] += w * (target.y()[static_cast<Index>(r)] - m[k]);
  }
  return m;
}

Vector linear_gaussian_map(const PredictionTarget& target) {
  const Problem& p = target.problem();
  require(p.kind() == ProblemKind::kLinearGaussian, ErrorCode::kInvalidArgument,
          "linear-Gaussian MAP needs a linear-Gaussian problem");
  const Matrix& l = target.cov_chol();
  const Matrix al = p.op() * l.triangularView<Eigen::Lower>();
  const double inv = 1.0 / (p.tau() * p.tau());
  Matrix h = inv * (al.transpose() * al);
  h.diagonal().array() += 1.0;
  const Vector rhs = inv * (al.transpose() * (target.y() - p.op() * target.denoise().mean));
  const Vector u = h.llt().solve(rhs);
  return target.denoise().mean + l.triangularView<Eigen::Lower>() * u;
}

MapResult lbfgs_map(const PredictionTarget& target, const Vector& init, int iters, int memory) {
  require_dim(init.size(), target.dim(), "MAP init");
  const Index d = target.dim();
  const Matrix& l = target.cov_chol();
  const Vector& mean = target.denoise().mean;
  const Problem& p = target.problem();
  const Vector& y = target.y();

  LikelihoodScratch ls;
  Vector m(d), g_like(d);
  Objective fn = [&](const Vector& u, Vector& grad) {
    m.noalias() = mean + l.triangularView<Eigen::Lower>() * u;
    const double like = p.log_likelihood_kernel(m, y, &g_like, ls);
    grad.resize(d);
    grad.noalias() = u - l.transpose() * g_like;
    return -(like - 0.5 * u.squaredNorm());
  };

  Vector u0 = l.triangularView<Eigen::Lower>().solve(init - mean);
  Vector gtmp(d);
  if (!u0.allFinite() || !std::isfinite(fn(u0, gtmp)) || !gtmp.allFinite()) u0.setZero();

  LbfgsOptions opts;
  opts.max_iters = iters;
  opts.memory = memory;
  const LbfgsResult r = lbfgs_minimize(fn, u0, opts);
  MapResult out;
  out.m = mean + l.triangularView<Eigen::Lower>() * r.x;
  out.degraded = r.degraded;
  out.iterations = r.iterations;
  out.grad_norm = r.grad_norm;
  if (diverged_state(out.m)) throw DivergedSampleError(r.iterations, "MAP iterate diverged");
  return out;
}

MapResult solve_map(const PredictionTarget& target, const Vector& init, const SamplerConfig& cfg) {
  const Problem& p = target.problem();
  MapSolver solver = cfg.map_solver;
  if (solver == MapSolver::kAuto) {
    solver = p.kind() == ProblemKind::kLinearGaussian ? MapSolver::kClosedForm : MapSolver::kLbfgs;
  }
  if (solver == MapSolver::kLbfgs) return lbfgs_map(target, init, cfg.lbfgs_iters, cfg.lbfgs_memory);
  MapResult out;
  if (p.is_selection() && target.isotropic()) {
    out.m = closed_form_map(target);
  } else {
    out.m = linear_gaussian_map(target);
  }
  if (diverged_state(out.m)) throw DivergedSampleError(0, "MAP solution diverged");
  return out;
}

MapResult rto_solve(const PredictionTarget& target, const Vector& mean_perturbed, const Vector& y_perturbed,
                    const Vector& init, const SamplerConfig& cfg) {
  return solve_map(target.with(y_perturbed, mean_perturbed), init, cfg);
}

MapResult rto_sample(const PredictionTarget& target, const Vector& init, Rng& rng, const SamplerConfig& cfg) {
  const Index d = target.dim();
  Vector xi(d);
  rng.fill_normal(xi);
  Vector mean = target.denoise().mean;
  if (target.isotropic()) {
    mean.noalias() += std::sqrt(target.denoise().isotropic_variance) * xi;
  } else {
    mean.noalias() += target.cov_chol().triangularView<Eigen::Lower>() * xi;
  }
  const Vector y = target.problem().perturb_measurement(target.y(), rng);
  return rto_solve(target, mean, y, init, cfg);
}

std::vector<Vector> representative_points(const GaussianMixture& prior, std::size_t count) {
  std::vector<Vector> pts;
  const std::size_t k = prior.size();
  const Index d = prior.dim();
  std::vector<Eigen::SelfAdjointEigenSolver<Matrix>> eig;
  eig.reserve(k);
  for (std::size_t i = 0; i < k && pts.size() < count; ++i) {
    pts.push_back(prior.component(i).mean);
  }
  for (std::size_t i = 0; i < k; ++i) eig.emplace_back(prior.component(i).covariance);
  for (Index a = 0; a < d && pts.size() < count; ++a) {
    for (std::size_t i = 0; i < k && pts.size() < count; ++i) {
      // Eigen sorts ascending; walk from the largest axis down.
      const Index col = d - 1 - a;
      const Vector axis = std::sqrt(eig[i].eigenvalues()[col]) * eig[i].eigenvectors().col(col);
      pts.push_back(prior.component(i).mean + axis);
      if (pts.size() < count) pts.push_back(prior.component(i).mean - axis);
    }
  }
  return pts;
}

Matrix average_gauss_newton(const Problem& problem, const std::vector<Vector>& points) {
  require(!points.empty(), ErrorCode::kInvalidArgument, "need at least one representative point");
  const Index d = problem.dim();
  Matrix acc = Matrix::Zero(d, d);
  const double w = 1.0 / static_cast<double>(points.size());
  for (const auto& p : points) {
    require_dim(p.size(), d, "representative point");
    problem.add_gauss_newton_hessian(p, w, acc);
  }
  return 0.5 * (acc + acc.transpose());
}

}  // namespace bipsda
