#include "bipsda/reference.hpp"

#include "bipsda/samplers.hpp"
#include "bipsda/small_la.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace bipsda {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Gaussian log density evaluator with a cached inverse Cholesky factor.
class GaussianLogPdf {
 public:
  GaussianLogPdf(const Vector& mean, const Matrix& cov, const char* what)
      : mean_(mean), chol_(cholesky_or_throw(cov, what)) {
    const Index d = mean.size();
    linv_ = chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
    norm_ = -chol_.diagonal().array().log().sum() - 0.5 * static_cast<double>(d) * kLog2Pi;
  }

  double operator()(const Vector& m, Vector& diff, Vector& z) const {
    diff = m - mean_;
    z.resize(mean_.size());
    gemv(linv_, diff, 1.0, 0.0, z);
    return norm_ - 0.5 * z.squaredNorm();
  }

  void sample(Rng& rng, Vector& xi, Vector& out) const {
    xi.resize(mean_.size());
    rng.fill_normal(xi);
    out = mean_;
    gemv(chol_, xi, 1.0, 1.0, out);
  }

  const Vector& mean() const { return mean_; }
  const Matrix& chol() const { return chol_; }

 private:
  Vector mean_;
  Matrix chol_;
  Matrix linv_;
  double norm_ = 0.0;
};

bool sign_symmetric(const Problem& p) { return p.kind() == ProblemKind::kPhaseRetrieval; }

struct ChainOutput {
  Matrix kept;
  long accepted = 0;
  long proposed = 0;
  long refl_accepted = 0;
  long refl_proposed = 0;
  double step = 0.0;
};

// Stratified starts: per dimension, one normal quantile band per chain.
Matrix stratified_starts(const GaussianComponent& comp, int chains, std::uint64_t seed) {
  const Index d = comp.mean.size();
  const Matrix chol = cholesky_or_throw(comp.covariance, "prior component covariance");
  Rng rng(seed);
  const boost::math::normal_distribution<double> unit;
  Matrix z(chains, d);
  std::vector<int> perm(static_cast<std::size_t>(chains));
  for (Index j = 0; j < d; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int c = chains - 1; c > 0; --c) std::swap(perm[static_cast<std::size_t>(c)], perm[rng.below(c + 1)]);
    for (int c = 0; c < chains; ++c) {
      const double u = (perm[static_cast<std::size_t>(c)] + rng.uniform()) / chains;
      z(c, j) = boost::math::quantile(unit, std::clamp(u, 1e-12, 1.0 - 1e-12));
    }
  }
  Matrix starts(chains, d);
  for (int c = 0; c < chains; ++c) starts.row(c) = (comp.mean + chol * z.row(c).transpose()).transpose();
  return starts;
}

ChainOutput run_chain(const GaussianComponent& comp, const Matrix& comp_precision, const Problem& problem,
                      const Vector& y, const Matrix& precond, const Vector& start, const ReferenceConfig& cfg,
                      std::uint64_t seed) {
  const Index d = problem.dim();
  LikelihoodScratch scratch;
  Vector diff(d), pd(d), glike(d);
  auto logp = [&](const Vector& x, Vector* grad) {
    diff = x - comp.mean;
    gemv(comp_precision, diff, 1.0, 0.0, pd);
    if (!grad) return problem.log_likelihood_kernel(x, y, nullptr, scratch) - 0.5 * diff.dot(pd);
    glike.resize(d);
    const double ll = problem.log_likelihood_kernel(x, y, &glike, scratch);
    *grad = glike - pd;
    return ll - 0.5 * diff.dot(pd);
  };

  Rng rng(seed);
  MalaKernel kernel(precond, cfg.initial_step);
  Vector m = start, grad(d), refl(d), grefl(d);
  double lp = logp(m, &grad);
  require(std::isfinite(lp), ErrorCode::kInvalidArgument, "reference chain start has non-finite density");

  const long burn = static_cast<long>(std::floor(cfg.burn_in * static_cast<double>(cfg.iterations)));
  ChainOutput out;
  out.kept.resize(cfg.iterations - burn, d);
  const bool reflect = cfg.reflection_every > 0 && sign_symmetric(problem);
  constexpr long kWindow = 100;
  long window_acc = 0;
  double log_step = std::log(cfg.initial_step);

  for (long it = 0; it < cfg.iterations; ++it) {
    const bool acc = kernel.advance(logp, m, lp, grad, rng);
    if (it < burn) {
      window_acc += acc;
      if ((it + 1) % kWindow == 0) {
        log_step += static_cast<double>(window_acc) / kWindow - cfg.target_accept;
        kernel.set_step(std::exp(log_step));
        window_acc = 0;
      }
    } else {
      out.accepted += acc;
      ++out.proposed;
    }
    if (reflect && (it + 1) % cfg.reflection_every == 0) {
      refl = -m;
      const double lr = logp(refl, &grefl);
      const double u = rng.uniform();
      if (it >= burn) ++out.refl_proposed;
      if (std::isfinite(lr) && std::log(u) < lr - lp) {
        m.swap(refl);
        grad.swap(grefl);
        lp = lr;
        kernel.reset_cache();
        if (it >= burn) ++out.refl_accepted;
      }
    }
    if (it >= burn) out.kept.row(it - burn) = m.transpose();
  }
  out.step = kernel.step();
  return out;
}

// Per-dimension mean and covariance of a set of chains.
void pooled_moments(const std::vector<ChainOutput>& chains, Vector& mean, Matrix& cov) {
  const Index d = chains.front().kept.cols();
  mean = Vector::Zero(d);
  double n = 0.0;
  for (const auto& c : chains) {
    mean += c.kept.colwise().sum().transpose();
    n += static_cast<double>(c.kept.rows());
  }
  mean /= n;
  cov = Matrix::Zero(d, d);
  for (const auto& c : chains) {
    const Matrix centered = c.kept.rowwise() - mean.transpose();
    cov.noalias() += centered.transpose() * centered;
  }
  cov /= (n - 1.0);
}

}  // namespace

ComponentWeightEstimate ComponentWeightEstimate::from_log_weights(Vector log_weights) {
  ComponentWeightEstimate est;
  const double lse = log_sum_exp(log_weights);
  require(std::isfinite(lse), ErrorCode::kInvalidArgument, "every component has zero estimated weight");
  est.normalized_weights = (log_weights.array() - lse).unaryExpr([](double v) { return std::exp(v); });
  est.normalized_weights /= est.normalized_weights.sum();
  est.log_weights = std::move(log_weights);
  est.importance_ess = Vector::Zero(est.log_weights.size());
  return est;
}

void ReferenceConfig::validate() const {
  require(chains >= 2, ErrorCode::kInvalidArgument, "reference MCMC needs at least two chains");
  require(iterations >= 8, ErrorCode::kInvalidArgument, "reference MCMC needs at least 8 iterations");
  require(burn_in >= 0.0 && burn_in < 1.0, ErrorCode::kInvalidArgument, "burn-in fraction must be in [0, 1)");
  require(initial_step > 0.0, ErrorCode::kInvalidArgument, "initial MALA step must be positive");
  require(target_accept > 0.0 && target_accept < 1.0, ErrorCode::kInvalidArgument,
          "target acceptance must be in (0, 1)");
  require(importance_draws >= 100, ErrorCode::kInvalidArgument, "need at least 100 importance draws");
  require(rhat_gate > 1.0, ErrorCode::kInvalidArgument, "R-hat gate must exceed 1");
  require(min_weight >= 0.0 && min_weight < 1.0, ErrorCode::kInvalidArgument, "min_weight must be in [0, 1)");
  require(reflection_every >= 0, ErrorCode::kInvalidArgument, "reflection period must be nonnegative");
}

double component_log_evidence(const GaussianComponent& comp, const Problem& problem, const Vector& y,
                              const Vector& center, const Matrix& cov, long draws, std::uint64_t seed,
                              double* kish_ess) {
  require(draws >= 1, ErrorCode::kInvalidArgument, "importance draw count must be positive");
  const GaussianLogPdf prior(comp.mean, comp.covariance, "prior component covariance");
  const GaussianLogPdf wide(center, cov, "importance proposal covariance");
  constexpr long kChunks = 16;
  const long per = (draws + kChunks - 1) / kChunks;
  std::vector<Vector> chunk_logw(kChunks);

  parallel_for(kChunks, 0, [&](std::size_t k) {
    const long lo = static_cast<long>(k) * per;
    const long hi = std::min(draws, lo + per);
    Vector& lw = chunk_logw[k];
    lw.resize(std::max(0L, hi - lo));
    Rng rng(derive_seed(seed, k));
    LikelihoodScratch scratch;
    Vector m, xi, diff, z;
    for (long j = lo; j < hi; ++j) {
      if (rng.uniform() < 0.5) {
        prior.sample(rng, xi, m);
      } else {
        wide.sample(rng, xi, m);
      }
      const double lp = prior(m, diff, z);
      const double lq = wide(m, diff, z);
      const double log_q = std::log(0.5) + std::max(lp, lq) + std::log1p(std::exp(-std::abs(lp - lq)));
      lw[j - lo] = problem.log_likelihood_kernel(m, y, nullptr, scratch) + lp - log_q;
    }
  });

  Vector all(draws);
  Index pos = 0;
  for (const auto& lw : chunk_logw) {
    all.segment(pos, lw.size()) = lw;
    pos += lw.size();
  }
  const double lse = log_sum_exp(all);
  if (kish_ess) {
    if (std::isfinite(lse)) {
      const Vector w = (all.array() - lse).exp();
      *kish_ess = 1.0 / w.squaredNorm();
    } else {
      *kish_ess = 0.0;
    }
  }
  return lse - std::log(static_cast<double>(draws));
}

ReferenceResult exact_posterior_sample(const GaussianMixture& prior, const Problem& problem, const Vector& y,
                                       std::size_t n, std::uint64_t seed) {
  require(problem.kind() == ProblemKind::kLinearGaussian, ErrorCode::kInvalidArgument,
          std::string("exact posterior sampling needs a linear-Gaussian problem, got ") + to_string(problem.kind()));
  require(n >= 1, ErrorCode::kInvalidArgument, "sample count must be positive");
  require_dim(prior.dim(), problem.dim(), "prior");
  problem.check_measurement(y);
  const auto t0 = std::chrono::steady_clock::now();
  const Index k = problem.meas_dim();
  const GaussianMixture post =
      gmm_condition_linear(prior, problem.op(), y, problem.tau() * problem.tau() * Matrix::Identity(k, k));
  Rng rng(seed);
  ReferenceResult out;
  out.batch.samples = post.sample(n, rng);
  out.batch.method = "Reference";
  out.batch.master_seed = seed;
  out.batch.reference = true;
  out.batch.runtime_seconds = elapsed_since(t0);

  auto& diag = out.diagnostics;
  diag.exact = true;
  Vector logw(static_cast<Index>(post.size()));
  for (std::size_t i = 0; i < post.size(); ++i) logw[static_cast<Index>(i)] = post.log_weight(i);
  diag.weights = ComponentWeightEstimate::from_log_weights(std::move(logw));
  diag.rhat = Vector::Ones(problem.dim());
  diag.ess = Vector::Constant(problem.dim(), static_cast<double>(n));
  diag.max_rhat = 1.0;
  diag.min_ess = static_cast<double>(n);
  return out;
}

ReferenceResult reference_mcmc(const GaussianMixture& prior, const Problem& problem, const Vector& y, std::size_t n,
                               std::uint64_t seed, const ReferenceConfig& cfg) {
  cfg.validate();
  require(n >= 1, ErrorCode::kInvalidArgument, "sample count must be positive");
  require_dim(prior.dim(), problem.dim(), "prior");
  problem.check_measurement(y);
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t ncomp = prior.size();
  const Index d = problem.dim();

  // Pilot weights decide which components carry enough mass to sample.
  const long pilot_draws = std::min<long>(cfg.importance_draws, 100000);
  Vector pilot_logw(static_cast<Index>(ncomp));
  for (std::size_t i = 0; i < ncomp; ++i) {
    const auto& comp = prior.component(i);
    pilot_logw[static_cast<Index>(i)] =
        std::log(comp.weight) + component_log_evidence(comp, problem, y, comp.mean, comp.covariance, pilot_draws,
                                                       derive_seed(seed, label_hash("pilot"), i));
  }
  const auto pilot = ComponentWeightEstimate::from_log_weights(pilot_logw);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < ncomp; ++i)
    if (pilot.normalized_weights[static_cast<Index>(i)] >= cfg.min_weight) active.push_back(i);

  // Chains for every active component run as one flat task list.
  std::vector<Matrix> precond(ncomp), starts(ncomp);
  for (std::size_t i : active) {
    const auto& comp = prior.component(i);
    const GaussianMixture single({GaussianComponent{1.0, comp.mean, comp.covariance}});
    precond[i] = average_gauss_newton(problem, representative_points(single)) + prior.precision(i);
    starts[i] = stratified_starts(comp, cfg.chains, derive_seed(seed, label_hash("starts"), i));
  }
  const std::size_t nchains = static_cast<std::size_t>(cfg.chains);
  std::vector<std::vector<ChainOutput>> runs(ncomp, std::vector<ChainOutput>(nchains));
  parallel_for(active.size() * nchains, cfg.workers, [&](std::size_t task) {
    const std::size_t i = active[task / nchains];
    const std::size_t c = task % nchains;
    runs[i][c] = run_chain(prior.component(i), prior.precision(i), problem, y, precond[i],
                           starts[i].row(static_cast<Index>(c)).transpose(), cfg,
                           derive_seed(seed, label_hash("chain"), (i << 16) | c));
  });

  ReferenceDiagnostics diag;
  diag.rhat = Vector::Constant(d, 0.0);
  diag.ess = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector logw = Vector::Constant(static_cast<Index>(ncomp), kNegInf);
  Vector is_ess = Vector::Zero(static_cast<Index>(ncomp));
  for (std::size_t i = 0; i < ncomp; ++i) {
    ComponentDiagnostics cd;
    cd.component = i;
    const bool is_active = std::find(active.begin(), active.end(), i) != active.end();
    cd.sampled = is_active;
    if (is_active) {
      ChainSet cs;
      long acc = 0, prop = 0, racc = 0, rprop = 0;
      for (const auto& ch : runs[i]) {
        cs.chains.push_back(ch.kept);
        acc += ch.accepted;
        prop += ch.proposed;
        racc += ch.refl_accepted;
        rprop += ch.refl_proposed;
        cd.steps.push_back(ch.step);
      }
      cd.rhat = psrf(cs);
      cd.ess = ess(cs);
      cd.acceptance = prop ? static_cast<double>(acc) / static_cast<double>(prop) : 0.0;
      cd.reflection_acceptance = rprop ? static_cast<double>(racc) / static_cast<double>(rprop) : 0.0;
      for (Index j = 0; j < d; ++j) {
        // A NaN R-hat (frozen chains) must fail the gate.
        diag.rhat[j] = std::isnan(cd.rhat[j]) ? std::numeric_limits<double>::infinity()
                                               : std::max(diag.rhat[j], cd.rhat[j]);
        diag.ess[j] = std::min(diag.ess[j], cd.ess[j]);
      }
      Vector mean;
      Matrix cov;
      pooled_moments(runs[i], mean, cov);
      cov = 4.0 * cov + 1e-10 * Matrix::Identity(d, d);
      const auto& comp = prior.component(i);
      double kish = 0.0;
      logw[static_cast<Index>(i)] =
          std::log(comp.weight) + component_log_evidence(comp, problem, y, mean, cov, cfg.importance_draws,
                                                         derive_seed(seed, label_hash("evidence"), i), &kish);
      is_ess[static_cast<Index>(i)] = kish;
    }
    diag.components.push_back(std::move(cd));
  }
  diag.weights = ComponentWeightEstimate::from_log_weights(logw);
  diag.weights.importance_ess = is_ess;
  diag.max_rhat = diag.rhat.maxCoeff();
  diag.min_ess = diag.ess.minCoeff();

  if (!(diag.max_rhat < cfg.rhat_gate)) {
    throw ConvergenceError("reference MCMC did not converge: max R-hat " + std::to_string(diag.max_rhat) +
                               " is not below " + std::to_string(cfg.rhat_gate),
                           std::move(diag));
  }

  // Allocate draws across components by the estimated weights, then pick
  // distinct pooled states from each component's kept chains.
  Rng rng(derive_seed(seed, label_hash("pool")));
  std::vector<double> w(diag.weights.normalized_weights.data(),
                        diag.weights.normalized_weights.data() + diag.weights.normalized_weights.size());
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<std::size_t> counts(ncomp, 0);
  for (std::size_t s = 0; s < n; ++s) ++counts[pick(rng.engine())];

  Matrix samples(static_cast<Index>(n), d);
  Index row = 0;
  for (std::size_t i = 0; i < ncomp; ++i) {
    if (counts[i] == 0) continue;
    const Index per_chain = runs[i].front().kept.rows();
    const std::size_t pool = nchains * static_cast<std::size_t>(per_chain);
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    const bool replace = counts[i] > pool;
    for (std::size_t s = 0; s < counts[i]; ++s) {
      std::size_t at;
      if (replace) {
        at = idx[rng.below(pool)];
      } else {
        const std::size_t j = s + rng.below(pool - s);
        std::swap(idx[s], idx[j]);
        at = idx[s];
      }
      samples.row(row++) = runs[i][at / static_cast<std::size_t>(per_chain)].kept.row(
          static_cast<Index>(at % static_cast<std::size_t>(per_chain)));
    }
  }
  // Interleave components so any prefix is a valid mixture draw.
  for (Index r = samples.rows() - 1; r > 0; --r) {
    const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(r) + 1));
    if (j != r) samples.row(r).swap(samples.row(j));
  }

  ReferenceResult out;
  out.batch.samples = std::move(samples);
  out.batch.method = "Reference";
  out.batch.master_seed = seed;
  out.batch.reference = true;
  out.batch.runtime_seconds = elapsed_since(t0);
  out.diagnostics = std::move(diag);
  return out;
}

ReferenceResult reference_sample(const GaussianMixture& prior, const Problem& problem, const Vector& y,
                                 std::size_t n, std::uint64_t seed, const ReferenceConfig& cfg) {
  if (problem.kind() == ProblemKind::kLinearGaussian) return exact_posterior_sample(prior, problem, y, n, seed);
  return reference_mcmc(prior, problem, y, n, seed, cfg);
}

}  // namespace bipsda
