#include "bipsda/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bipsda {

double log_sum_exp(const Vector& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

Matrix cholesky_or_throw(const Matrix& spd, const char* what) {
  require(spd.rows() == spd.cols(), ErrorCode::kDimensionMismatch, std::string(what) + ": matrix not square");
  Eigen::LLT<Matrix> llt(spd);
  if (llt.info() != Eigen::Success || !llt.matrixL().toDenseMatrix().allFinite()) {
    fail(ErrorCode::kNotPositiveDefinite, std::string(what) + ": matrix is not symmetric positive definite");
  }
  return llt.matrixL();
}

GaussianMixture::GaussianMixture(std::vector<GaussianComponent> components) : components_(std::move(components)) {
  require(!components_.empty(), ErrorCode::kInvalidArgument, "mixture needs at least one component");
  dim_ = components_.front().mean.size();
  require(dim_ > 0, ErrorCode::kInvalidArgument, "mixture dimension must be positive");

  double total = 0.0;
  for (const auto& c : components_) {
    require(c.weight > 0.0 && std::isfinite(c.weight), ErrorCode::kInvalidArgument,
            "mixture weights must be strictly positive");
    require_dim(c.mean.size(), dim_, "component mean");
    require_dim(c.covariance.rows(), dim_, "component covariance rows");
    require_dim(c.covariance.cols(), dim_, "component covariance cols");
    total += c.weight;
  }
  require(std::abs(total - 1.0) <= 1e-12, ErrorCode::kInvalidArgument, "mixture weights must sum to 1");

  cache_.reserve(components_.size());
  for (auto& c : components_) {
    const double asym = (c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff();
    require(asym <= 1e-10 * std::max(1.0, c.covariance.cwiseAbs().maxCoeff()), ErrorCode::kNotPositiveDefinite,
            "component covariance is not symmetric");
    c.covariance = (0.5 * (c.covariance + c.covariance.transpose())).eval();
    Cache k;
    k.log_weight = std::log(c.weight);
    k.chol = cholesky_or_throw(c.covariance, "component covariance");
    k.log_det = 2.0 * k.chol.diagonal().array().log().sum();
    const Matrix linv = k.chol.triangularView<Eigen::Lower>().solve(Matrix::Identity(dim_, dim_));
    k.precision = linv.transpose() * linv;
    k.precision = (0.5 * (k.precision + k.precision.transpose())).eval();
    cache_.push_back(std::move(k));
  }

  cumulative_.resize(components_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    acc += components_[i].weight;
    cumulative_[i] = acc;
  }
  cumulative_.back() = std::numeric_limits<double>::infinity();
}

void GaussianMixture::component_terms(const Vector& m, Vector& log_terms, Matrix* grads) const {
  require_dim(m.size(), dim_, "mixture argument");
  const std::size_t k = components_.size();
  log_terms.resize(static_cast<Index>(k));
  if (grads) grads->resize(dim_, static_cast<Index>(k));
  Vector d(dim_), pd(dim_);
  for (std::size_t i = 0; i < k; ++i) {
    d.noalias() = m - components_[i].mean;
    pd.noalias() = cache_[i].precision * d;
    const double quad = d.dot(pd);
    log_terms[static_cast<Index>(i)] =
        cache_[i].log_weight - 0.5 * (static_cast<double>(dim_) * kLog2Pi + cache_[i].log_det + quad);
    if (grads) grads->col(static_cast<Index>(i)) = -pd;
  }
}

double GaussianMixture::log_density(const Vector& m) const {
  Vector terms;
  component_terms(m, terms, nullptr);
  return log_sum_exp(terms);
}

double GaussianMixture::component_log_density(std::size_t i, const Vector& m) const {
  require_dim(m.size(), dim_, "mixture argument");
  const Vector d = m - components_.at(i).mean;
  const double quad = d.dot(cache_[i].precision * d);
  return -0.5 * (static_cast<double>(dim_) * kLog2Pi + cache_[i].log_det + quad);
}

Vector GaussianMixture::responsibilities(const Vector& m) const {
  Vector terms;
  component_terms(m, terms, nullptr);
  const double lse = log_sum_exp(terms);
  return (terms.array() - lse).exp();
}

Vector GaussianMixture::score(const Vector& m) const {
  Vector terms;
  Matrix grads;
  component_terms(m, terms, &grads);
  const double lse = log_sum_exp(terms);
  const Vector resp = (terms.array() - lse).exp();
  return grads * resp;
}

Matrix GaussianMixture::score_jacobian(const Vector& m) const {
  Vector terms;
  Matrix grads;
  component_terms(m, terms, &grads);
  const double lse = log_sum_exp(terms);
  const Vector resp = (terms.array() - lse).exp();
  const Vector s = grads * resp;
  Matrix jac = -s * s.transpose();
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const double r = resp[static_cast<Index>(i)];
    if (r == 0.0) continue;
    const auto g = grads.col(static_cast<Index>(i));
    jac.noalias() += r * (g * g.transpose());
    jac -= r * cache_[i].precision;
  }
  return 0.5 * (jac + jac.transpose());
}

std::size_t GaussianMixture::sample_component(Rng& rng) const {
  const double u = rng.uniform();
  return static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
}

void GaussianMixture::sample_one(Rng& rng, Eigen::Ref<Vector> out) const {
  const std::size_t c = sample_component(rng);
  Vector z(dim_);
  rng.fill_normal(z);
  out.noalias() = components_[c].mean + cache_[c].chol.triangularView<Eigen::Lower>() * z;
}

Matrix GaussianMixture::sample(std::size_t n, Rng& rng) const {
  require(n >= 1, ErrorCode::kInvalidArgument, "sample count must be positive");
  Matrix out(static_cast<Index>(n), dim_);
  Vector row(dim_);
  for (std::size_t i = 0; i < n; ++i) {
    sample_one(rng, row);
    out.row(static_cast<Index>(i)) = row.transpose();
  }
  return out;
}

GaussianMixture GaussianMixture::noised(double sigma) const {
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::kInvalidArgument, "noise level must be non-negative");
  if (sigma == 0.0) return *this;
  std::vector<GaussianComponent> comps = components_;
  const double s2 = sigma * sigma;
  for (auto& c : comps) c.covariance.diagonal().array() += s2;
  return GaussianMixture(std::move(comps));
}

double gmm_log_density(const GaussianMixture& gmm, const Vector& m) { return gmm.log_density(m); }

Matrix gmm_sample(const GaussianMixture& gmm, std::size_t n, Rng& rng) { return gmm.sample(n, rng); }

GaussianMixture noisy_mixture(const GaussianMixture& gmm, double sigma) { return gmm.noised(sigma); }

Vector noisy_score(const GaussianMixture& gmm, const Vector& m, double sigma) { return gmm.noised(sigma).score(m); }

Matrix noisy_score_jacobian(const GaussianMixture& gmm, const Vector& m, double sigma) {
  return gmm.noised(sigma).score_jacobian(m);
}

GaussianMixture gmm_condition_linear(const GaussianMixture& gmm, const Matrix& A, const Vector& y,
                                     const Matrix& noise_cov) {
  const Index d = gmm.dim();
  const Index k = A.rows();
  require_dim(A.cols(), d, "observation operator columns");
  require_dim(y.size(), k, "measurement");
  require_dim(noise_cov.rows(), k, "noise covariance rows");
  require_dim(noise_cov.cols(), k, "noise covariance cols");
  if (k == 0) return gmm;
  cholesky_or_throw(noise_cov, "noise covariance");

  const std::size_t nc = gmm.size();
  std::vector<GaussianComponent> post(nc);
  Vector log_w(static_cast<Index>(nc));
  const Matrix eye = Matrix::Identity(d, d);
  for (std::size_t i = 0; i < nc; ++i) {
    const auto& c = gmm.component(i);
    const Matrix a_sigma = A * c.covariance;
    Matrix s = a_sigma * A.transpose() + noise_cov;
    s = (0.5 * (s + s.transpose())).eval();
    Eigen::LLT<Matrix> llt(s);
    require(llt.info() == Eigen::Success, ErrorCode::kNotPositiveDefinite, "innovation covariance not SPD");
    const Vector resid = y - A * c.mean;
    // Gain K = Sigma A^T S^{-1}.
    const Matrix gain = llt.solve(a_sigma).transpose();
    post[i].mean = c.mean + gain * resid;
    // Joseph form keeps the update PSD when the measurement is nearly exact.
    const Matrix i_ka = eye - gain * A;
    Matrix cov = i_ka * c.covariance * i_ka.transpose() + gain * noise_cov * gain.transpose();
    post[i].covariance = 0.5 * (cov + cov.transpose());

    const Matrix l = llt.matrixL();
    const Vector white = l.triangularView<Eigen::Lower>().solve(resid);
    const double log_det_s = 2.0 * l.diagonal().array().log().sum();
    log_w[static_cast<Index>(i)] =
        gmm.log_weight(i) - 0.5 * (static_cast<double>(k) * kLog2Pi + log_det_s + white.squaredNorm());
  }
  const double lse = log_sum_exp(log_w);
  std::vector<GaussianComponent> kept;
  kept.reserve(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    post[i].weight = std::exp(log_w[static_cast<Index>(i)] - lse);
    // Components whose evidence underflows carry exactly zero mass.
    if (post[i].weight > 0.0) kept.push_back(std::move(post[i]));
  }
  double total = 0.0;
  for (const auto& c : kept) total += c.weight;
  for (auto& c : kept) c.weight /= total;
  return GaussianMixture(std::move(kept));
}

Matrix random_orthogonal(Index dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix g(dim, dim);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < dim; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < dim; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  return q;
}

GaussianMixture benchmark_prior(std::uint64_t rotation_seed) {
  constexpr Index kDim = 10;
  const Vector spectrum = Vector::LinSpaced(kDim, 1.0, 2.0);
  const Matrix q = random_orthogonal(kDim, rotation_seed);
  Matrix rotated = q * spectrum.asDiagonal() * q.transpose();
  rotated = (0.5 * (rotated + rotated.transpose())).eval();

  std::vector<GaussianComponent> comps(3);
  comps[0] = {0.4, Vector::Constant(kDim, -5.0), Matrix::Identity(kDim, kDim)};
  comps[1] = {0.3, Vector::Zero(kDim), Matrix(spectrum.asDiagonal())};
  comps[2] = {0.3, Vector::Constant(kDim, 5.0), rotated};
  return GaussianMixture(std::move(comps));
}

}  // namespace bipsda
