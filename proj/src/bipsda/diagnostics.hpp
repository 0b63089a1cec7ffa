#pragma once

#include "bipsda/common.hpp"

#include <vector>

namespace bipsda {

/// Equal-length chains, each an n_iter x D matrix. The leading `burn_in`
/// fraction of every chain is ignored by the diagnostics.
struct ChainSet {
  std::vector<Matrix> chains;
  double burn_in = 0.0;

  Index dim() const { return chains.empty() ? 0 : chains.front().cols(); }
  /// Rows kept after burn-in.
  Index kept_length() const;
  Index first_kept() const;
};

/// Split-chain rank-normalized R-hat per dimension: the largest of the bulk,
/// folded and classic (raw-draw) statistics. +inf when within-chain variance
/// vanishes but the chains disagree, NaN when every draw is identical.
Vector psrf(const ChainSet& cs);

/// Bulk effective sample size per dimension on rank-normalized split chains,
/// with Geyer's initial monotone sequence truncation. Zero for a constant
/// dimension.
Vector ess(const ChainSet& cs);

/// Classic (non-rank) split R-hat of one dimension, exposed for tests.
double split_rhat_raw(const std::vector<Vector>& chains);

/// Normal scores of pooled ranks, (r - 3/8) / (S + 1/4), ties averaged.
std::vector<Vector> rank_normalize(const std::vector<Vector>& chains);

}  // namespace bipsda
