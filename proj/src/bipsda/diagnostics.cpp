#include "bipsda/diagnostics.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bipsda {

Index ChainSet::first_kept() const {
  if (chains.empty()) return 0;
  return static_cast<Index>(std::floor(burn_in * static_cast<double>(chains.front().rows())));
}

Index ChainSet::kept_length() const {
  if (chains.empty()) return 0;
  return chains.front().rows() - first_kept();
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void validate(const ChainSet& cs) {
  require(cs.chains.size() >= 2, ErrorCode::kInvalidArgument, "diagnostics need at least two chains");
  require(cs.burn_in >= 0.0 && cs.burn_in < 1.0, ErrorCode::kInvalidArgument, "burn-in fraction must be in [0, 1)");
  const Index rows = cs.chains.front().rows(), cols = cs.chains.front().cols();
  for (const auto& c : cs.chains) {
    require(c.rows() == rows && c.cols() == cols, ErrorCode::kDimensionMismatch, "chains must share a shape");
  }
  require(cs.kept_length() >= 4, ErrorCode::kInvalidArgument, "chains need at least 4 draws after burn-in");
}

// Each post-burn-in chain split into halves for one dimension.
std::vector<Vector> split_halves(const ChainSet& cs, Index dim) {
  const Index first = cs.first_kept();
  const Index n = cs.kept_length();
  const Index half = n / 2;
  std::vector<Vector> out;
  out.reserve(cs.chains.size() * 2);
  for (const auto& c : cs.chains) {
    out.emplace_back(c.col(dim).segment(first, half));
    out.emplace_back(c.col(dim).segment(first + n - half, half));
  }
  return out;
}

bool all_identical(const std::vector<Vector>& chains) {
  const double v = chains.front()[0];
  for (const auto& c : chains)
    if ((c.array() != v).any()) return false;
  return true;
}

double mean_of(const Vector& v) { return v.mean(); }

double var_unbiased(const Vector& v) {
  const double mu = v.mean();
  return (v.array() - mu).square().sum() / static_cast<double>(v.size() - 1);
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<Vector> rank_normalize(const std::vector<Vector>& chains) {
  std::size_t total = 0;
  for (const auto& c : chains) total += static_cast<std::size_t>(c.size());
  std::vector<double> vals;
  vals.reserve(total);
  for (const auto& c : chains)
    for (Index i = 0; i < c.size(); ++i) vals.push_back(c[i]);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
  std::vector<double> rank(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j + 1 < total && vals[order[j + 1]] == vals[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> unit;
  const double s = static_cast<double>(total);
  std::vector<Vector> out;
  out.reserve(chains.size());
  std::size_t pos = 0;
  for (const auto& c : chains) {
    Vector z(c.size());
    for (Index i = 0; i < c.size(); ++i) z[i] = boost::math::quantile(unit, (rank[pos++] - 0.375) / (s + 0.25));
    out.push_back(std::move(z));
  }
  return out;
}

double split_rhat_raw(const std::vector<Vector>& chains) {
  const auto m = static_cast<double>(chains.size());
  const auto n = static_cast<double>(chains.front().size());
  Vector means(static_cast<Index>(chains.size()));
  double w = 0.0;
  for (std::size_t i = 0; i < chains.size(); ++i) {
    means[static_cast<Index>(i)] = mean_of(chains[i]);
    w += var_unbiased(chains[i]);
  }
  w /= m;
  const double b_over_n = var_unbiased(means);
  if (w == 0.0) return b_over_n > 0.0 ? std::numeric_limits<double>::infinity() : kNaN;
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  return std::sqrt(var_plus / w);
}

Vector psrf(const ChainSet& cs) {
  validate(cs);
  const Index d = cs.dim();
  Vector out(d);
  for (Index j = 0; j < d; ++j) {
    const auto halves = split_halves(cs, j);
    if (all_identical(halves)) {
      out[j] = kNaN;
      continue;
    }
    const double bulk = split_rhat_raw(rank_normalize(halves));
    std::vector<double> pooled;
    for (const auto& h : halves) pooled.insert(pooled.end(), h.data(), h.data() + h.size());
    const double med = median_of(pooled);
    std::vector<Vector> folded;
    folded.reserve(halves.size());
    for (const auto& h : halves) folded.emplace_back((h.array() - med).abs());
    const double tail = all_identical(folded) ? bulk : split_rhat_raw(rank_normalize(folded));
    // Rank normalization caps R-hat for fully separated chains, so the
    // classic statistic on the raw draws is folded in as well.
    const double classic = split_rhat_raw(halves);
    out[j] = std::max({bulk, tail, std::isnan(classic) ? bulk : classic});
  }
  return out;
}

Vector ess(const ChainSet& cs) {
  validate(cs);
  const Index d = cs.dim();
  Vector out(d);
  for (Index j = 0; j < d; ++j) {
    const auto halves = split_halves(cs, j);
    if (all_identical(halves)) {
      out[j] = 0.0;
      continue;
    }
    const auto z = rank_normalize(halves);
    const std::size_t m = z.size();
    const Index n = z.front().size();
    const double nd = static_cast<double>(n);

    std::vector<Vector> centered;
    centered.reserve(m);
    Vector means(static_cast<Index>(m));
    for (std::size_t c = 0; c < m; ++c) {
      means[static_cast<Index>(c)] = z[c].mean();
      centered.emplace_back(z[c].array() - means[static_cast<Index>(c)]);
    }
    // Mean over chains of the biased lag-t autocovariance.
    auto mean_acov = [&](Index t) {
      double acc = 0.0;
      for (const auto& x : centered) acc += x.head(n - t).dot(x.tail(n - t)) / nd;
      return acc / static_cast<double>(m);
    };
    const double acov0 = mean_acov(0);
    const double mean_var = acov0 * nd / (nd - 1.0);
    double var_plus = mean_var * (nd - 1.0) / nd;
    if (m > 1) var_plus += var_unbiased(means);
    if (!(var_plus > 0.0)) {
      out[j] = 0.0;
      continue;
    }
    auto rho = [&](Index t) { return 1.0 - (mean_var - mean_acov(t)) / var_plus; };

    // Geyer initial monotone sequence over pairs (rho_2k + rho_2k+1).
    double sum_pairs = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (Index k = 0; 2 * k + 1 < n; ++k) {
      const double r0 = (k == 0) ? 1.0 : rho(2 * k);
      double pair = r0 + rho(2 * k + 1);
      if (!(pair > 0.0)) break;
      pair = std::min(pair, prev_pair);
      sum_pairs += pair;
      prev_pair = pair;
    }
    const double total = static_cast<double>(m) * nd;
    const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / std::log10(total));
    out[j] = total / tau;
  }
  return out;
}

}  // namespace bipsda
