#include "bipsda/annealing.hpp"

#include <cmath>

namespace bipsda {

NoiseSchedule::NoiseSchedule(double T, int num_steps, double rho) : T_(T), num_steps_(num_steps), rho_(rho) {
  require(T > 0.0 && std::isfinite(T), ErrorCode::kInvalidArgument, "schedule horizon T must be positive");
  require(num_steps >= 1, ErrorCode::kInvalidArgument, "schedule needs at least one step");
  require(rho > 0.0 && std::isfinite(rho), ErrorCode::kInvalidArgument, "schedule exponent rho must be positive");
  times_.resize(static_cast<std::size_t>(num_steps) + 1);
  for (int i = 0; i <= num_steps; ++i) {
    times_[static_cast<std::size_t>(i)] = T * std::pow(static_cast<double>(i) / num_steps, rho);
  }
  times_.front() = 0.0;
  times_.back() = T;
  for (int i = 1; i <= num_steps; ++i) {
    require(times_[static_cast<std::size_t>(i)] > times_[static_cast<std::size_t>(i) - 1],
            ErrorCode::kInvalidArgument, "schedule is not strictly increasing in i; reduce rho or N");
  }
}

std::vector<double> NoiseSchedule::timesteps() const { return {times_.rbegin(), times_.rend()}; }

Matrix ScoreProvider::jacobian(const Vector&, double) const {
  fail(ErrorCode::kVariantUnsupported, "score provider has no Jacobian; TC variants are unavailable");
}

AnalyticScore::AnalyticScore(GaussianMixture prior) : prior_(std::move(prior)) {
  eig_.reserve(prior_.size());
  for (std::size_t i = 0; i < prior_.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(prior_.component(i).covariance);
    require(es.info() == Eigen::Success, ErrorCode::kNotPositiveDefinite, "eigendecomposition failed");
    eig_.push_back({es.eigenvectors(), es.eigenvalues()});
  }
}

void AnalyticScore::terms(const Vector& m, double s2, Vector& log_terms, Matrix& coeffs) const {
  require_dim(m.size(), dim(), "score argument");
  const std::size_t k = prior_.size();
  const Index d = dim();
  log_terms.resize(static_cast<Index>(k));
  coeffs.resize(d, static_cast<Index>(k));
  Vector diff(d);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& e = eig_[i];
    diff.noalias() = m - prior_.component(i).mean;
    auto c = coeffs.col(static_cast<Index>(i));
    c.noalias() = e.u.transpose() * diff;
    double quad = 0.0, log_det = 0.0;
    for (Index j = 0; j < d; ++j) {
      const double v = e.lambda[j] + s2;
      quad += c[j] * c[j] / v;
      log_det += std::log(v);
      c[j] /= v;
    }
    log_terms[static_cast<Index>(i)] = prior_.log_weight(i) - 0.5 * (log_det + quad);
  }
}

void AnalyticScore::score(const Vector& m, double sigma, Vector& out) const {
  Vector log_terms;
  Matrix coeffs;
  terms(m, sigma * sigma, log_terms, coeffs);
  const double lse = log_sum_exp(log_terms);
  out.setZero(dim());
  for (std::size_t i = 0; i < prior_.size(); ++i) {
    const double r = std::exp(log_terms[static_cast<Index>(i)] - lse);
    if (r == 0.0) continue;
    out.noalias() -= r * (eig_[i].u * coeffs.col(static_cast<Index>(i)));
  }
}

Matrix AnalyticScore::jacobian(const Vector& m, double sigma) const {
  const double s2 = sigma * sigma;
  Vector log_terms;
  Matrix coeffs;
  terms(m, s2, log_terms, coeffs);
  const double lse = log_sum_exp(log_terms);
  const Index d = dim();
  Vector s = Vector::Zero(d);
  Matrix acc = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < prior_.size(); ++i) {
    const double r = std::exp(log_terms[static_cast<Index>(i)] - lse);
    if (r == 0.0) continue;
    const auto& e = eig_[i];
    const Vector g = -(e.u * coeffs.col(static_cast<Index>(i)));
    s.noalias() += r * g;
    const Vector inv = (e.lambda.array() + s2).inverse();
    acc.noalias() -= r * (e.u * inv.asDiagonal() * e.u.transpose());
    acc.noalias() += r * (g * g.transpose());
  }
  acc.noalias() -= s * s.transpose();
  return 0.5 * (acc + acc.transpose());
}

const char* to_string(DenoiseVariant v) {
  switch (v) {
    case DenoiseVariant::kODE: return "ODE";
    case DenoiseVariant::kTU: return "TU";
    case DenoiseVariant::kTC: return "TC";
  }
  return "?";
}

DenoiseVariant denoise_variant_from_string(const std::string& s) {
  if (s == "ODE") return DenoiseVariant::kODE;
  if (s == "TU") return DenoiseVariant::kTU;
  if (s == "TC") return DenoiseVariant::kTC;
  fail(ErrorCode::kInvalidArgument, "unknown denoising variant '" + s + "'");
}

void DenoiseApprox::validate() const {
  require(ode_steps >= 1, ErrorCode::kInvalidArgument, "ode_steps must be at least 1");
  require(beta_multiplier > 0.0 && std::isfinite(beta_multiplier), ErrorCode::kInvalidArgument,
          "beta_multiplier must be positive");
}

Vector tweedie_mean(const ScoreProvider& sp, const Vector& m_t, double sigma_t) {
  require(sigma_t >= 0.0, ErrorCode::kInvalidArgument, "sigma must be non-negative");
  if (sigma_t == 0.0) return m_t;
  return m_t + sigma_t * sigma_t * sp.score(m_t, sigma_t);
}

Matrix tc_covariance(const ScoreProvider& sp, const Vector& m_t, double sigma_t, bool clamp) {
  require(sigma_t >= 0.0, ErrorCode::kInvalidArgument, "sigma must be non-negative");
  require(sp.has_jacobian(), ErrorCode::kVariantUnsupported,
          "score provider has no Jacobian; TC variants are unavailable");
  const Index d = m_t.size();
  const double s2 = sigma_t * sigma_t;
  if (s2 == 0.0) return Matrix::Zero(d, d);
  Matrix c = s2 * (Matrix::Identity(d, d) + s2 * sp.jacobian(m_t, sigma_t));
  c = (0.5 * (c + c.transpose())).eval();
  if (!clamp) return c;
  const double floor = 1e-8 * s2;
  Eigen::SelfAdjointEigenSolver<Matrix> es(c);
  if (es.eigenvalues().minCoeff() >= floor) return c;
  const Vector lam = es.eigenvalues().cwiseMax(floor);
  c = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (c + c.transpose());
}

Vector ode_mean(const ScoreProvider& sp, const Vector& m_t, double t, int ode_steps) {
  require(ode_steps >= 1, ErrorCode::kInvalidArgument, "ode_steps must be at least 1");
  require(t >= 0.0, ErrorCode::kInvalidArgument, "ODE start time must be non-negative");
  Vector m = m_t;
  Vector s(m_t.size());
  const double h = t / ode_steps;
  for (int j = 0; j < ode_steps; ++j) {
    const double tj = (j == 0) ? t : t * static_cast<double>(ode_steps - j) / ode_steps;
    const double sig = NoiseSchedule::sigma(tj);
    sp.score(m, sig, s);
    // dm/dt = -sigma_dot sigma s; one backward Euler-in-time step of size h.
    m.noalias() += (h * NoiseSchedule::sigma_dot(tj) * sig) * s;
  }
  return m;
}

GaussianDist build_denoise_approx(const DenoiseApprox& cfg, const ScoreProvider& sp, const Vector& m_t, double t) {
  cfg.validate();
  require(t > 0.0, ErrorCode::kInvalidArgument, "denoising time must be positive");
  const double sigma = NoiseSchedule::sigma(t);
  const Index d = m_t.size();
  GaussianDist out;
  switch (cfg.variant) {
    case DenoiseVariant::kODE:
    case DenoiseVariant::kTU: {
      out.mean = cfg.variant == DenoiseVariant::kODE ? ode_mean(sp, m_t, t, cfg.ode_steps) : tweedie_mean(sp, m_t, sigma);
      const double beta = cfg.beta_multiplier * sigma;
      out.isotropic_variance = beta * beta;
      require(out.isotropic_variance > 0.0, ErrorCode::kInvalidArgument, "denoising variance underflowed to zero");
      out.covariance = out.isotropic_variance * Matrix::Identity(d, d);
      break;
    }
    case DenoiseVariant::kTC:
      out.mean = tweedie_mean(sp, m_t, sigma);
      out.covariance = tc_covariance(sp, m_t, sigma, true);
      break;
  }
  return out;
}

}  // namespace bipsda
