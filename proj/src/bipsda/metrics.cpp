#include "bipsda/metrics.hpp"

#include "bipsda/engine.hpp"
#include "bipsda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bipsda {

namespace {

void require_nonempty(const Matrix& x, const char* what) {
  require(x.rows() >= 1 && x.cols() >= 1, ErrorCode::kInvalidArgument, std::string(what) + " batch is empty");
}

void require_pair(const Matrix& a, const Matrix& b) {
  require_nonempty(a, "first");
  require_nonempty(b, "second");
  require_dim(b.cols(), a.cols(), "second batch");
}

Vector unbiased_variance(const Matrix& x) {
  require(x.rows() >= 2, ErrorCode::kInvalidArgument, "variance needs at least two samples");
  const Vector mu = x.colwise().mean().transpose();
  return (x.rowwise() - mu.transpose()).array().square().colwise().sum().transpose() /
         static_cast<double>(x.rows() - 1);
}

// Lexicographic order on (rows, cols, data) so symmetric metrics can fix the
// argument order.
bool canonical_less(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  if (a.cols() != b.cols()) return a.cols() < b.cols();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

constexpr Index kBlock = 128;

// Mean of k(x_i, y_j) over all pairs. With eps_i = eps_max 2^-(Nb-i), every
// term is a repeated square of exp(-d / eps_max).
double mean_kernel(const Matrix& x, const Matrix& y, const MmdConfig& cfg) {
  const double eps_max = cfg.bandwidths().back();
  const Vector nx = x.rowwise().squaredNorm();
  const Vector ny = y.rowwise().squaredNorm();
  const Index nblocks = (x.rows() + kBlock - 1) / kBlock;
  std::vector<double> block_sum(static_cast<std::size_t>(nblocks), 0.0);
  parallel_for(static_cast<std::size_t>(nblocks), 0, [&](std::size_t bi) {
    const Index r0 = static_cast<Index>(bi) * kBlock;
    const Index rows = std::min(kBlock, x.rows() - r0);
    Matrix g;
    g.noalias() = x.middleRows(r0, rows) * y.transpose();
    double acc = 0.0;
    for (Index j = 0; j < y.rows(); ++j) {
      double col = 0.0;
      for (Index i = 0; i < rows; ++i) {
        const double d = std::max(0.0, nx[r0 + i] + ny[j] - 2.0 * g(i, j));
        double e = std::exp(-d / eps_max);
        double k = 0.0;
        for (int b = 0; b < cfg.num_bandwidths; ++b) {
          k += e;
          e *= e;
        }
        col += k;
      }
      acc += col;
    }
    block_sum[bi] = acc;
  });
  double total = 0.0;
  for (double s : block_sum) total += s;
  return total / (static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
}

}  // namespace

void CmdConfig::validate() const {
  require(max_order >= 2, ErrorCode::kInvalidArgument, "CMD order K must be at least 2");
  require(alpha > 0.0 && std::isfinite(alpha), ErrorCode::kInvalidArgument, "CMD decay rate alpha must be positive");
}

void MmdConfig::validate() const {
  require(num_bandwidths >= 1, ErrorCode::kInvalidArgument, "MMD needs at least one bandwidth");
  require(num_bandwidths <= 10, ErrorCode::kInvalidArgument, "MMD supports at most 10 bandwidths");
  require(base_bandwidth > 0.0 && std::isfinite(base_bandwidth), ErrorCode::kInvalidArgument,
          "MMD base bandwidth must be positive");
}

std::vector<double> MmdConfig::bandwidths() const {
  const int centre = (num_bandwidths + 1) / 2;
  std::vector<double> eps;
  for (int i = 1; i <= num_bandwidths; ++i) eps.push_back(std::ldexp(base_bandwidth, i - centre));
  return eps;
}

double mean_error(const Matrix& a, const Matrix& b) {
  require_pair(a, b);
  return (a.colwise().mean() - b.colwise().mean()).norm();
}

double variance_error(const Matrix& a, const Matrix& b) {
  require_pair(a, b);
  return (unbiased_variance(a) - unbiased_variance(b)).norm();
}

Vector central_moment(const Matrix& x, int k) {
  require_nonempty(x, "moment");
  require(k >= 2, ErrorCode::kInvalidArgument, "central moment order must be at least 2");
  const Eigen::RowVectorXd mu = x.colwise().mean();
  return (x.rowwise() - mu).array().pow(k).colwise().mean().transpose();
}

double estimate_alpha(const std::vector<Matrix>& reference_batches) {
  require(!reference_batches.empty(), ErrorCode::kInvalidArgument, "alpha needs at least one reference batch");
  double acc = 0.0;
  for (const auto& b : reference_batches) {
    require_nonempty(b, "reference");
    acc += unbiased_variance(b).cwiseSqrt().maxCoeff();
  }
  const double alpha = 4.0 * acc / static_cast<double>(reference_batches.size());
  require(alpha > 0.0, ErrorCode::kInvalidArgument, "reference batches have zero spread");
  return alpha;
}

Vector cmd_terms(const Matrix& a, const Matrix& b, const CmdConfig& cfg) {
  require_pair(a, b);
  cfg.validate();
  Vector terms(cfg.max_order);
  terms[0] = (a.colwise().mean() - b.colwise().mean()).norm() / cfg.alpha;
  for (int k = 2; k <= cfg.max_order; ++k) {
    terms[k - 1] = (central_moment(a, k) - central_moment(b, k)).norm() / std::pow(cfg.alpha, k);
  }
  return terms;
}

double cmd(const Matrix& a, const Matrix& b, const CmdConfig& cfg) {
  const Vector t = cmd_terms(a, b, cfg);
  double s = 0.0;
  for (Index i = 0; i < t.size(); ++i) s += t[i];
  return s;
}

Matrix subsample_rows(const Matrix& x, std::size_t count, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (count == 0 || count >= n) return x;
  Rng rng(seed);
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), Index{0});
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  Matrix out(static_cast<Index>(count), x.cols());
  for (std::size_t i = 0; i < count; ++i) out.row(static_cast<Index>(i)) = x.row(idx[i]);
  return out;
}

double estimate_base_bandwidth(const Matrix& reference, std::size_t subsample, std::uint64_t seed) {
  require(reference.rows() >= 2, ErrorCode::kInvalidArgument, "base bandwidth needs at least two samples");
  const Matrix x = subsample_rows(reference, subsample, seed);
  // sum_{i != j} |x_i - x_j|^2 = 2 n sum_i |x_i - mean|^2
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const double ss = (x.rowwise() - mu).squaredNorm();
  const double eps = 2.0 * ss / static_cast<double>(x.rows() - 1);
  require(eps > 0.0, ErrorCode::kInvalidArgument, "reference samples are all identical");
  return eps;
}

double mmd_kernel(const Vector& x, const Vector& y, const MmdConfig& cfg) {
  cfg.validate();
  require_dim(y.size(), x.size(), "kernel argument");
  const double d = (x - y).squaredNorm();
  double k = 0.0;
  for (double eps : cfg.bandwidths()) k += std::exp(-d / eps);
  return k;
}

double mmd(const Matrix& a, const Matrix& b, const MmdConfig& cfg) {
  require_pair(a, b);
  cfg.validate();
  const bool swap = canonical_less(b, a);
  const Matrix& first = swap ? b : a;
  const Matrix& second = swap ? a : b;
  const Matrix x = subsample_rows(first, cfg.subsample, derive_seed(cfg.seed, 0));
  const Matrix y = subsample_rows(second, cfg.subsample, derive_seed(cfg.seed, 1));
  const double v = mean_kernel(x, x, cfg) + mean_kernel(y, y, cfg) - 2.0 * mean_kernel(x, y, cfg);
  return std::max(0.0, v);
}

MmdReference::MmdReference(const Matrix& reference, const MmdConfig& cfg) : cfg_(cfg) {
  require_nonempty(reference, "reference");
  cfg_.validate();
  ref_ = subsample_rows(reference, cfg_.subsample, derive_seed(cfg_.seed, 0));
  self_mean_ = mean_kernel(ref_, ref_, cfg_);
}

double MmdReference::against(const Matrix& other) const {
  require_nonempty(other, "comparison");
  require_dim(other.cols(), ref_.cols(), "comparison batch");
  const Matrix y = subsample_rows(other, cfg_.subsample, derive_seed(cfg_.seed, 1));
  const double v = self_mean_ + mean_kernel(y, y, cfg_) - 2.0 * mean_kernel(ref_, y, cfg_);
  return std::max(0.0, v);
}

}  // namespace bipsda
