#include "bipsda/problems.hpp"

#include "bipsda/small_la.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace bipsda {

const char* to_string(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::kLinearGaussian: return "linear_gaussian";
    case ProblemKind::kPhaseRetrieval: return "phase_retrieval";
    case ProblemKind::kPoissonXray: return "poisson_xray";
  }
  return "unknown";
}

ProblemKind problem_kind_from_string(const std::string& s) {
  if (s == "linear_gaussian") return ProblemKind::kLinearGaussian;
  if (s == "phase_retrieval") return ProblemKind::kPhaseRetrieval;
  if (s == "poisson_xray") return ProblemKind::kPoissonXray;
  fail(ErrorCode::kInvalidArgument, "unknown problem kind '" + s + "'");
}

Problem Problem::linear(Matrix A, double tau) {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::kInvalidArgument, "noise level tau must be positive");
  require(A.cols() > 0, ErrorCode::kInvalidArgument, "operator needs at least one column");
  require(A.allFinite(), ErrorCode::kInvalidArgument, "operator has non-finite entries");
  Problem p;
  p.kind_ = ProblemKind::kLinearGaussian;
  p.op_ = std::move(A);
  p.tau_ = tau;
  return p;
}

Problem Problem::inpainting(double tau, const std::vector<int>& kept, Index dim) {
  require(dim > 0, ErrorCode::kInvalidArgument, "dimension must be positive");
  std::set<int> seen;
  for (int k : kept) {
    require(k >= 0 && k < dim, ErrorCode::kInvalidArgument, "kept index " + std::to_string(k) + " out of range");
    require(seen.insert(k).second, ErrorCode::kInvalidArgument, "duplicate kept index " + std::to_string(k));
  }
  Matrix a = Matrix::Zero(static_cast<Index>(kept.size()), dim);
  for (std::size_t r = 0; r < kept.size(); ++r) a(static_cast<Index>(r), kept[r]) = 1.0;
  Problem p = linear(std::move(a), tau);
  p.kept_ = kept;
  return p;
}

Problem Problem::phase_retrieval(std::uint64_t seed, double tau) {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::kInvalidArgument, "noise level tau must be positive");
  Rng rng(seed);
  Matrix b(5, 10);
  for (Index i = 0; i < b.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j) b(i, j) = rng.normal();
  Problem p;
  p.kind_ = ProblemKind::kPhaseRetrieval;
  p.op_ = std::move(b);
  p.tau_ = tau;
  p.seed_ = seed;
  return p;
}

Problem Problem::xray(std::uint64_t seed, double intensity) {
  require(intensity > 0.0 && std::isfinite(intensity), ErrorCode::kInvalidArgument, "intensity must be positive");
  Rng rng(seed);
  Matrix c(15, 10);
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j) c(i, j) = 0.01 + 0.04 * rng.uniform();
  Problem p;
  p.kind_ = ProblemKind::kPoissonXray;
  p.op_ = std::move(c);
  p.intensity_ = intensity;
  p.tau_ = 0.0;
  p.seed_ = seed;
  return p;
}

Problem Problem::from_parts(ProblemKind kind, Matrix op, double tau, double intensity, std::uint64_t seed,
                            std::vector<int> kept) {
  Problem p;
  switch (kind) {
    case ProblemKind::kLinearGaussian:
      if (!kept.empty()) {
        p = inpainting(tau, kept, op.cols());
        require(p.op_.rows() == op.rows() && (p.op_ - op).cwiseAbs().maxCoeff() == 0.0, ErrorCode::kInvalidArgument,
                "stored selection operator disagrees with kept indices");
      } else {
        p = linear(std::move(op), tau);
      }
      break;
    case ProblemKind::kPhaseRetrieval:
      require(tau > 0.0, ErrorCode::kInvalidArgument, "noise level tau must be positive");
      p.kind_ = kind;
      p.op_ = std::move(op);
      p.tau_ = tau;
      break;
    case ProblemKind::kPoissonXray:
      require(intensity > 0.0, ErrorCode::kInvalidArgument, "intensity must be positive");
      require(op.size() > 0 && op.minCoeff() >= 0.01 && op.maxCoeff() <= 0.05, ErrorCode::kInvalidArgument,
              "x-ray operator entries must lie in [0.01, 0.05]");
      p.kind_ = kind;
      p.op_ = std::move(op);
      p.tau_ = 0.0;
      p.intensity_ = intensity;
      break;
  }
  p.seed_ = seed;
  return p;
}

Vector Problem::forward(const Vector& m) const {
  require_dim(m.size(), dim(), "parameter");
  switch (kind_) {
    case ProblemKind::kLinearGaussian: return op_ * m;
    case ProblemKind::kPhaseRetrieval: return (op_ * m).array().square();
    case ProblemKind::kPoissonXray: return intensity_ * (-(op_ * m).array()).exp();
  }
  return {};
}

Matrix Problem::jacobian(const Vector& m) const {
  require_dim(m.size(), dim(), "parameter");
  switch (kind_) {
    case ProblemKind::kLinearGaussian: return op_;
    case ProblemKind::kPhaseRetrieval: return (2.0 * (op_ * m)).asDiagonal() * op_;
    case ProblemKind::kPoissonXray: return -(forward(m).asDiagonal() * op_);
  }
  return {};
}

void Problem::check_measurement(const Vector& y) const {
  require_dim(y.size(), meas_dim(), "measurement");
  require(y.allFinite(), ErrorCode::kInvalidArgument, "measurement has non-finite entries");
  if (kind_ == ProblemKind::kPoissonXray) {
    for (Index k = 0; k < y.size(); ++k) {
      require(y[k] >= 0.0, ErrorCode::kInvalidArgument, "Poisson counts must be nonnegative");
      require(y[k] == std::floor(y[k]), ErrorCode::kInvalidArgument, "Poisson counts must be integers");
    }
  }
}

double Problem::log_likelihood_constant(const Vector& y) const {
  if (kind_ != ProblemKind::kPoissonXray) return 0.0;
  double c = 0.0;
  for (Index k = 0; k < y.size(); ++k) c -= std::lgamma(y[k] + 1.0);
  return c;
}

double Problem::log_likelihood_kernel(const Vector& m, const Vector& y, Vector* grad, LikelihoodScratch& s) const {
  const Index kdim = meas_dim();
  s.fm.resize(kdim);
  s.r.resize(kdim);
  gemv(op_, m, 1.0, 0.0, s.fm);
  switch (kind_) {
    case ProblemKind::kLinearGaussian: {
      s.r = y - s.fm;
      const double inv = 1.0 / (tau_ * tau_);
      if (grad) gemv_t(op_, s.r, inv, 0.0, *grad);
      return -0.5 * s.r.squaredNorm() * inv;
    }
    case ProblemKind::kPhaseRetrieval: {
      s.r = y.array() - s.fm.array().square();
      const double inv = 1.0 / (tau_ * tau_);
      const double val = -0.5 * s.r.squaredNorm() * inv;
      if (grad) {
        s.r.array() *= s.fm.array() * (2.0 * inv);
        gemv_t(op_, s.r, 1.0, 0.0, *grad);
      }
      return val;
    }
    case ProblemKind::kPoissonXray: {
      // log f = log I0 - C m, evaluated directly to avoid log of an underflowed f.
      const double log_i0 = std::log(intensity_);
      double val = 0.0;
      for (Index k = 0; k < kdim; ++k) {
        const double logf = log_i0 - s.fm[k];
        const double f = std::exp(logf);
        val += y[k] * logf - f;
        s.r[k] = f - y[k];
      }
      if (grad) gemv_t(op_, s.r, 1.0, 0.0, *grad);
      return val;
    }
  }
  return 0.0;
}

double Problem::log_likelihood(const Vector& m, const Vector& y) const {
  require_dim(m.size(), dim(), "parameter");
  check_measurement(y);
  LikelihoodScratch s;
  return log_likelihood_kernel(m, y, nullptr, s) + log_likelihood_constant(y);
}

Vector Problem::grad_log_likelihood(const Vector& m, const Vector& y) const {
  require_dim(m.size(), dim(), "parameter");
  check_measurement(y);
  LikelihoodScratch s;
  Vector g(dim());
  log_likelihood_kernel(m, y, &g, s);
  return g;
}

void Problem::add_gauss_newton_hessian(const Vector& m, double scale, Matrix& acc) const {
  switch (kind_) {
    case ProblemKind::kLinearGaussian:
      acc.noalias() += (scale / (tau_ * tau_)) * (op_.transpose() * op_);
      break;
    case ProblemKind::kPhaseRetrieval: {
      const Matrix j = jacobian(m);
      acc.noalias() += (scale / (tau_ * tau_)) * (j.transpose() * j);
      break;
    }
    case ProblemKind::kPoissonXray: {
      const Vector f = forward(m);
      acc.noalias() += scale * (op_.transpose() * f.asDiagonal() * op_);
      break;
    }
  }
}

Matrix Problem::gauss_newton_hessian(const Vector& m, const Vector& y) const {
  require_dim(m.size(), dim(), "parameter");
  check_measurement(y);
  Matrix h = Matrix::Zero(dim(), dim());
  add_gauss_newton_hessian(m, 1.0, h);
  return 0.5 * (h + h.transpose());
}

Vector Problem::simulate_y(const Vector& m, Rng& rng) const {
  Vector f = forward(m);
  if (kind_ == ProblemKind::kPoissonXray) {
    for (Index k = 0; k < f.size(); ++k) {
      require(std::isfinite(f[k]), ErrorCode::kInvalidArgument, "Poisson rate is not finite");
      std::poisson_distribution<long long> pois(f[k]);
      f[k] = static_cast<double>(pois(rng.engine()));
    }
    return f;
  }
  for (Index k = 0; k < f.size(); ++k) f[k] += tau_ * rng.normal();
  return f;
}

Measurement Problem::simulate(const GaussianMixture& prior, Rng& rng) const {
  require_dim(prior.dim(), dim(), "prior");
  Measurement out;
  out.m_true.resize(dim());
  prior.sample_one(rng, out.m_true);
  out.y = simulate_y(out.m_true, rng);
  return out;
}

Vector Problem::perturb_measurement(const Vector& y, Rng& rng) const {
  Vector out = y;
  if (kind_ == ProblemKind::kPoissonXray) {
    for (Index k = 0; k < out.size(); ++k) out[k] = std::max(0.0, y[k] + std::sqrt(std::max(y[k], 1.0)) * rng.normal());
    return out;
  }
  for (Index k = 0; k < out.size(); ++k) out[k] += tau_ * rng.normal();
  return out;
}

double Problem::snr_db(const GaussianMixture& prior, std::size_t n, Rng& rng) const {
  require(n >= 1, ErrorCode::kInvalidArgument, "SNR sample count must be positive");
  double signal = 0.0, noise = 0.0;
  Vector m(dim());
  for (std::size_t i = 0; i < n; ++i) {
    prior.sample_one(rng, m);
    const Vector f = forward(m);
    const Vector y = simulate_y(m, rng);
    signal += f.squaredNorm();
    noise += (y - f).squaredNorm();
  }
  return 10.0 * std::log10(signal / noise);
}

Problem make_inpainting(double tau, const std::vector<int>& kept) {
  require(kept.size() == 8, ErrorCode::kInvalidArgument, "inpainting keeps exactly 8 of 10 coordinates");
  return Problem::inpainting(tau, kept, 10);
}

Problem make_phase_retrieval(std::uint64_t seed) { return Problem::phase_retrieval(seed); }

Problem make_xray(std::uint64_t seed) { return Problem::xray(seed); }

}  // namespace bipsda
