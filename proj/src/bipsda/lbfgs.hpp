#pragma once

#include "bipsda/common.hpp"

#include <functional>

namespace bipsda {

/// Objective for minimization: returns f(x) and writes grad f(x).
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct LbfgsOptions {
  int max_iters = 40;
  int memory = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  double grad_tol = 1e-10;
  int max_line_search_evals = 25;
};

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  /// Line search failed before the gradient tolerance was met.
  bool degraded = false;
};

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing + zoom
/// with safeguarded cubic interpolation). Returns the best iterate seen, so
/// the result never has a larger objective than x0.
LbfgsResult lbfgs_minimize(const Objective& fn, const Vector& x0, const LbfgsOptions& opts = {});

}  // namespace bipsda
