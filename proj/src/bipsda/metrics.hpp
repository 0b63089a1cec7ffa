#pragma once

#include "bipsda/common.hpp"

#include <cstdint>
#include <vector>

namespace bipsda {

struct CmdConfig {
  int max_order = 5;
  double alpha = 1.0;

  void validate() const;
};

struct MmdConfig {
  int num_bandwidths = 5;
  double base_bandwidth = 1.0;
  /// Sets larger than this are subsampled without replacement; 0 keeps all.
  std::size_t subsample = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  /// eps_i = base * 2^(i - ceil(Nb / 2)), i = 1..Nb.
  std::vector<double> bandwidths() const;
};

// Samples are stored one draw per row.
double mean_error(const Matrix& a, const Matrix& b);
double variance_error(const Matrix& a, const Matrix& b);

/// Componentwise k-th central moment (k >= 2), 1/n normalization.
Vector central_moment(const Matrix& x, int k);

/// 4 * mean over trials of the largest componentwise standard deviation.
double estimate_alpha(const std::vector<Matrix>& reference_batches);

/// The individual terms of the truncated sum: [mean term, c_2 term, ..., c_K term].
Vector cmd_terms(const Matrix& a, const Matrix& b, const CmdConfig& cfg);
double cmd(const Matrix& a, const Matrix& b, const CmdConfig& cfg);

/// Mean squared distance over all distinct pairs, in O(n D).
double estimate_base_bandwidth(const Matrix& reference, std::size_t subsample = 0, std::uint64_t seed = 0);

/// Multi-bandwidth RBF kernel between two points.
double mmd_kernel(const Vector& x, const Vector& y, const MmdConfig& cfg);

/// Squared MMD, V-statistic. Symmetric in (a, b) to the last bit and exactly
/// zero for identical sets.
double mmd(const Matrix& a, const Matrix& b, const MmdConfig& cfg);

/// Squared MMD against a fixed reference set whose self-similarity is cached.
class MmdReference {
 public:
  MmdReference(const Matrix& reference, const MmdConfig& cfg);
  double against(const Matrix& other) const;
  const MmdConfig& config() const { return cfg_; }

 private:
  MmdConfig cfg_;
  Matrix ref_;
  double self_mean_ = 0.0;
};

/// Rows of x chosen without replacement (sorted); x itself when count >= rows.
Matrix subsample_rows(const Matrix& x, std::size_t count, std::uint64_t seed);

}  // namespace bipsda
