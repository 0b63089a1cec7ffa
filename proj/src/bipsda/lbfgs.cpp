#include "bipsda/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace bipsda {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Trial {
  double a = 0.0;
  double f = 0.0;
  double d = 0.0;  // directional derivative
};

// Minimizer of the cubic matching values and slopes at p and q; NaN when the
// cubic has no real minimizer.
double cubic_minimizer(const Trial& p, const Trial& q) {
  const double d1 = p.d + q.d - 3.0 * (p.f - q.f) / (p.a - q.a);
  const double disc = d1 * d1 - p.d * q.d;
  if (!(disc >= 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double d2 = std::copysign(std::sqrt(disc), q.a - p.a);
  return q.a - (q.a - p.a) * (q.d + d2 - d1) / (q.d - p.d + 2.0 * d2);
}

class LineSearch {
 public:
  LineSearch(const Objective& fn, const Vector& x, const Vector& dir, double f0, double d0, const LbfgsOptions& o)
      : fn_(fn), x_(x), dir_(dir), f0_(f0), d0_(d0), o_(o), xt_(x.size()), gt_(x.size()) {}

  // Returns true and leaves the accepted point in (x_out, g_out, f_out).
  bool run(double a1, Vector& x_out, Vector& g_out, double& f_out) {
    Trial prev{0.0, f0_, d0_};
    double a = a1;
    for (int i = 0; evals_ < o_.max_line_search_evals; ++i) {
      Trial cur = eval(a);
      if (cur.f > f0_ + o_.c1 * a * d0_ || (i > 0 && cur.f >= prev.f)) return zoom(prev, cur, x_out, g_out, f_out);
      if (std::abs(cur.d) <= -o_.c2 * d0_) return accept(x_out, g_out, f_out, cur);
      if (cur.d >= 0.0) return zoom(cur, prev, x_out, g_out, f_out);
      prev = cur;
      a *= 2.0;
    }
    return false;
  }

  int evaluations() const { return evals_; }
  bool has_best() const { return best_f_ < kInf; }
  double best_f() const { return best_f_; }
  const Vector& best_x() const { return best_x_; }
  const Vector& best_g() const { return best_g_; }

 private:
  Trial eval(double a) {
    xt_.noalias() = x_ + a * dir_;
    double f = fn_(xt_, gt_);
    ++evals_;
    Trial t{a, f, gt_.dot(dir_)};
    if (!std::isfinite(f) || !std::isfinite(t.d)) {
      t.f = kInf;
      t.d = std::numeric_limits<double>::quiet_NaN();
    } else if (f < best_f_) {
      best_f_ = f;
      best_x_ = xt_;
      best_g_ = gt_;
    }
    return t;
  }

  bool accept(Vector& x_out, Vector& g_out, double& f_out, const Trial& t) {
    // The accepted trial is always the most recent evaluation.
    x_out = xt_;
    g_out = gt_;
    f_out = t.f;
    return true;
  }

  bool zoom(Trial lo, Trial hi, Vector& x_out, Vector& g_out, double& f_out) {
    while (evals_ < o_.max_line_search_evals) {
      const double left = std::min(lo.a, hi.a), right = std::max(lo.a, hi.a);
      const double width = right - left;
      if (width <= 1e-16 * std::max(1.0, right)) return false;
      double a = std::isfinite(hi.f) && std::isfinite(hi.d) ? cubic_minimizer(lo, hi)
                                                             : std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(a) || a < left + 0.1 * width || a > right - 0.1 * width) a = 0.5 * (lo.a + hi.a);
      Trial cur = eval(a);
      if (cur.f > f0_ + o_.c1 * a * d0_ || cur.f >= lo.f) {
        hi = cur;
      } else {
        if (std::abs(cur.d) <= -o_.c2 * d0_) return accept(x_out, g_out, f_out, cur);
        if (cur.d * (hi.a - lo.a) >= 0.0) hi = lo;
        lo = cur;
      }
    }
    return false;
  }

  const Objective& fn_;
  const Vector& x_;
  const Vector& dir_;
  double f0_, d0_;
  const LbfgsOptions& o_;
  Vector xt_, gt_;
  int evals_ = 0;
  double best_f_ = kInf;
  Vector best_x_, best_g_;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& fn, const Vector& x0, const LbfgsOptions& opts) {
  require(opts.memory >= 1 && opts.max_iters >= 0, ErrorCode::kInvalidArgument, "invalid L-BFGS options");
  require(opts.c1 > 0.0 && opts.c1 < opts.c2 && opts.c2 < 1.0, ErrorCode::kInvalidArgument,
          "Wolfe constants need 0 < c1 < c2 < 1");
  const Index n = x0.size();
  LbfgsResult res;
  Vector x = x0, g(n);
  double f = fn(x, g);
  res.evaluations = 1;
  require(std::isfinite(f) && g.allFinite(), ErrorCode::kInvalidArgument, "objective not finite at the initial point");

  Vector best_x = x, best_g = g;
  double best_f = f;

  const int mem = opts.memory;
  std::vector<Vector> s_hist(static_cast<std::size_t>(mem)), y_hist(static_cast<std::size_t>(mem));
  std::vector<double> rho(static_cast<std::size_t>(mem)), alpha(static_cast<std::size_t>(mem));
  int stored = 0, head = 0;  // ring buffer: newest pair at head - 1

  Vector dir(n), q(n), x_new(n), g_new(n);
  bool converged = g.norm() <= opts.grad_tol;
  bool degraded = false;
  int iter = 0;
  for (; iter < opts.max_iters && !converged; ++iter) {
    double a_init = 1.0;
    if (stored == 0) {
      dir = -g;
      a_init = std::min(1.0, 1.0 / g.norm());
    } else {
      q = g;
      for (int k = 0; k < stored; ++k) {
        const auto j = static_cast<std::size_t>((head - 1 - k + mem) % mem);
        alpha[j] = rho[j] * s_hist[j].dot(q);
        q.noalias() -= alpha[j] * y_hist[j];
      }
      const auto newest = static_cast<std::size_t>((head - 1 + mem) % mem);
      q *= s_hist[newest].dot(y_hist[newest]) / y_hist[newest].squaredNorm();
      for (int k = stored - 1; k >= 0; --k) {
        const auto j = static_cast<std::size_t>((head - 1 - k + mem) % mem);
        const double beta = rho[j] * y_hist[j].dot(q);
        q.noalias() += (alpha[j] - beta) * s_hist[j];
      }
      dir = -q;
    }
    double d0 = g.dot(dir);
    if (!(d0 < 0.0)) {
      stored = 0;
      dir = -g;
      d0 = -g.squaredNorm();
      a_init = std::min(1.0, 1.0 / g.norm());
    }

    LineSearch ls(fn, x, dir, f, d0, opts);
    double f_new = 0.0;
    const bool ok = ls.run(a_init, x_new, g_new, f_new);
    res.evaluations += ls.evaluations();
    if (ls.has_best() && ls.best_f() < best_f) {
      best_f = ls.best_f();
      best_x = ls.best_x();
      best_g = ls.best_g();
    }
    if (!ok) {
      // No further decrease is representable: treat as stationary.
      const bool at_precision = std::abs(a_init * d0) <= 1e-14 * std::max(1.0, std::abs(f));
      if (at_precision) converged = true;
      else degraded = true;
      break;
    }

    const auto slot = static_cast<std::size_t>(head);
    s_hist[slot] = x_new - x;
    y_hist[slot] = g_new - g;
    const double sy = s_hist[slot].dot(y_hist[slot]);
    if (sy > 1e-12 * s_hist[slot].norm() * y_hist[slot].norm()) {
      rho[slot] = 1.0 / sy;
      head = (head + 1) % mem;
      stored = std::min(stored + 1, mem);
    }
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    if (g.norm() <= opts.grad_tol) converged = true;
  }

  res.x = std::move(best_x);
  res.f = best_f;
  res.grad_norm = best_g.norm();
  res.iterations = iter;
  res.converged = converged || res.grad_norm <= opts.grad_tol;
  res.degraded = degraded;
  return res;
}

}  // namespace bipsda
