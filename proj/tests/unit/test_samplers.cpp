#include <doctest.h>

#include "bipsda/annealing.hpp"
#include "bipsda/samplers.hpp"
#include "oracles.hpp"

using namespace bipsda;

namespace {

GaussianDist iso(const Vector& mean, double var) {
  GaussianDist d;
  d.mean = mean;
  d.isotropic_variance = var;
  d.covariance = var * Matrix::Identity(mean.size(), mean.size());
  return d;
}

GaussianDist full(const Vector& mean, const Matrix& cov) {
  GaussianDist d;
  d.mean = mean;
  d.covariance = cov;
  return d;
}

// Exact moments of N(m; mu, C) * N(y; A m, tau^2 I).
void linear_posterior(const Matrix& A, double tau, const Vector& y, const Vector& mu, const Matrix& C, Vector& mean,
                      Matrix& cov) {
  const Matrix P = A.transpose() * A / (tau * tau) + C.inverse();
  cov = P.inverse();
  mean = cov * (A.transpose() * y / (tau * tau) + C.inverse() * mu);
}

// Batch-means standard error of a chain's coordinate means.
Vector batch_se(const Matrix& chain, int batches = 50) {
  const Index len = chain.rows() / batches;
  Matrix means(batches, chain.cols());
  for (int b = 0; b < batches; ++b) means.row(b) = chain.middleRows(b * len, len).colwise().mean();
  const Matrix c = means.rowwise() - means.colwise().mean();
  return (c.array().square().colwise().sum() / (batches - 1) / batches).sqrt().transpose();
}

}  // namespace

TEST_SUITE("samplers") {

TEST_CASE("prediction density: flat-prior limit and gradients") {
  std::mt19937_64 g(1);
  const Problem pr = make_phase_retrieval();
  const Vector m = oracle::randn(g, 10, 2.0);
  Rng rng(2);
  const Vector y = pr.simulate_y(oracle::randn(g, 10, 2.0), rng);
  const PredictionTarget flat(pr, y, iso(oracle::randn(g, 10), 1e12));
  CHECK(oracle::rel_err(flat.grad_log_density(m), pr.grad_log_likelihood(m, y)) < 1e-6);

  const std::vector<Problem> problems{make_inpainting(0.1), make_inpainting(5.0), make_phase_retrieval(), make_xray()};
  const AnalyticScore sp(benchmark_prior());
  for (const Problem& p : problems) {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const Vector mt = oracle::randn(g, 10, 3.0);
      const double t = 0.05 + 5.0 * std::uniform_real_distribution<double>()(g);
      const auto variant = static_cast<DenoiseVariant>(k % 3);
      const GaussianDist d = build_denoise_approx({variant, 1.0, 5}, sp, mt, t);
      const Vector yy = p.simulate_y(oracle::randn(g, 10, 2.0), rng);
      const PredictionTarget target(p, yy, d);
      const Vector x = d.mean + oracle::randn(g, 10, 0.5);
      const Vector fd = oracle::fd_gradient([&](const Vector& v) { return target.log_density(v); }, x, 1e-6);
      worst = std::max(worst, oracle::rel_err(target.grad_log_density(x), fd));
    }
    INFO(to_string(p.kind()));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("linear-Gaussian target: argmax is the closed-form MAP") {
  std::mt19937_64 g(3);
  const Problem p = make_inpainting(0.1);
  const Vector y = oracle::randn(g, 8, 2.0);
  const PredictionTarget t(p, y, iso(oracle::randn(g, 10), 0.3));
  const Vector map = closed_form_map(t);
  CHECK(t.grad_log_density(map).norm() < 1e-9);
  Vector mean;
  Matrix cov;
  linear_posterior(p.op(), 0.1, y, t.denoise().mean, t.denoise().covariance, mean, cov);
  CHECK((map - mean).norm() < 1e-10);
  CHECK((linear_gaussian_map(t) - mean).norm() < 1e-10);
}

TEST_CASE("closed-form MAP limits") {
  std::mt19937_64 g(4);
  const Problem p = make_inpainting(0.1);
  const Vector y = oracle::randn(g, 8, 2.0);
  const Vector mu = oracle::randn(g, 10, 2.0);
  const Vector wide = closed_form_map(PredictionTarget(p, y, iso(mu, 1e12)));
  CHECK((wide.head(8) - y).cwiseAbs().maxCoeff() < 1e-6);
  for (double var : {1e-6, 0.01, 1.0, 1e12}) {
    const Vector m = closed_form_map(PredictionTarget(p, y, iso(mu, var)));
    CHECK(m[8] == mu[8]);
    CHECK(m[9] == mu[9]);
  }
  CHECK_THROWS_AS(closed_form_map(PredictionTarget(make_xray(), Vector::Constant(15, 900.0), iso(mu, 1.0))), Error);
}

TEST_CASE("L-BFGS MAP agrees with the closed form") {
  std::mt19937_64 g(5);
  for (double tau : {0.1, 5.0}) {
    const Problem p = make_inpainting(tau);
    for (int k = 0; k < 10; ++k) {
      const PredictionTarget t(p, oracle::randn(g, 8, 3.0), iso(oracle::randn(g, 10, 3.0), 0.01 + k * 0.5));
      const MapResult r = lbfgs_map(t, t.denoise().mean, 40, 10);
      CHECK((r.m - closed_form_map(t)).norm() < 1e-8);
    }
  }
}

TEST_CASE("L-BFGS on a quadratic and at a stationary point") {
  std::mt19937_64 g(6);
  const Matrix H = oracle::random_spd(g, 10, 1.0);
  const Vector b = oracle::randn(g, 10);
  const Vector xstar = H.ldlt().solve(b);
  // Written around the minimizer so f keeps full relative precision near it.
  const Objective f = [&](const Vector& x, Vector& grad) {
    const Vector d = x - xstar;
    grad = H * d;
    return 0.5 * d.dot(grad);
  };
  // A tight curvature condition makes the line search effectively exact.
  LbfgsOptions opts;
  opts.max_iters = 15;
  opts.c1 = 1e-8;
  opts.c2 = 1e-6;
  const LbfgsResult r = lbfgs_minimize(f, Vector::Zero(10), opts);
  CHECK(r.grad_norm < 1e-10);
  CHECK(r.iterations <= 15);

  const LbfgsResult s = lbfgs_minimize(f, xstar, opts);
  CHECK(s.x == xstar);
  CHECK(s.iterations == 0);

  const Problem p = make_inpainting(0.1);
  const PredictionTarget t(p, oracle::randn(g, 8), iso(oracle::randn(g, 10), 0.5));
  const Vector m = closed_form_map(t);
  CHECK((lbfgs_map(t, m, 40, 10).m - m).norm() < 1e-12);
}

TEST_CASE("L-BFGS never worsens the objective") {
  std::mt19937_64 g(7);
  const AnalyticScore sp(benchmark_prior());
  Rng rng(8);
  for (const Problem& p : {make_phase_retrieval(), make_xray()}) {
    for (int k = 0; k < 30; ++k) {
      const Vector mt = oracle::randn(g, 10, 4.0);
      const GaussianDist d = build_denoise_approx({DenoiseVariant::kTU, 1.0, 5}, sp, mt, 0.1 + 0.3 * k);
      const PredictionTarget t(p, p.simulate_y(oracle::randn(g, 10, 2.0), rng), d);
      const Vector init = d.mean + oracle::randn(g, 10);
      const MapResult r = lbfgs_map(t, init, 40, 10);
      CHECK(t.log_density(r.m) >= t.log_density(init));
    }
  }
}

TEST_CASE("ULA: stationary variance, no-op and determinism") {
  const Problem flat = Problem::linear(Matrix::Zero(1, 10), 1.0);
  const PredictionTarget t(flat, Vector::Zero(1), iso(Vector::Zero(10), 1.0));
  const double h = 1e-3;
  Rng rng(9);
  Vector m = Vector::Zero(10);
  const int burn = 5000, n = 300000;
  for (int i = 0; i < burn; ++i) m = ula_sample(t, m, h, 1, rng);
  Vector s1 = Vector::Zero(10), s2 = Vector::Zero(10);
  for (int i = 0; i < n; ++i) {
    m = ula_sample(t, m, h, 1, rng);
    s1 += m;
    s2 += m.cwiseProduct(m);
  }
  const double var = ((s2 / n) - (s1 / n).cwiseProduct(s1 / n)).mean();
  CHECK(var > 0.9);
  CHECK(var < 1.1);

  const Vector init = Vector::LinSpaced(10, 0.0, 1.0);
  Rng r0(1);
  CHECK(ula_sample(t, init, 1e-300, 0, r0) == init);
  Rng a(3), b(3);
  CHECK(ula_sample(t, init, 0.01, 50, a) == ula_sample(t, init, 0.01, 50, b));
}

TEST_CASE("ULA diverges on the phase-retrieval target at the inpainting step") {
  const AnalyticScore sp(benchmark_prior());
  const Problem pr = make_phase_retrieval();
  Rng rng(10);
  const Measurement me = pr.simulate(benchmark_prior(), rng);
  // A late annealing step: the denoising variance t^2 is far below the step.
  const NoiseSchedule sched;
  const double t = sched.t(20);
  const Vector mt = me.m_true + t * rng.normal_vector(10);
  const PredictionTarget target(pr, me.y, build_denoise_approx({DenoiseVariant::kTU, 1.0, 5}, sp, mt, t));
  bool diverged = false;
  try {
    ula_sample(target, target.denoise().mean, 5e-5, 100, rng);
  } catch (const DivergedSampleError& e) {
    diverged = true;
    CHECK(e.code() == ErrorCode::kDivergedSample);
    CHECK(e.iteration() >= 0);
    CHECK(e.iteration() < 100);
  }
  CHECK(diverged);
}

TEST_CASE("MALA with identity preconditioner on a 2-D Gaussian") {
  std::mt19937_64 g(11);
  const Vector mu = oracle::randn(g, 2);
  const Matrix C = oracle::random_spd(g, 2);
  const Problem flat = Problem::linear(Matrix::Zero(1, 2), 1.0);
  const PredictionTarget t(flat, Vector::Zero(1), full(mu, C));
  MalaKernel k(Matrix::Identity(2, 2), 0.5);
  Rng rng(12);
  PredictionTarget::Scratch s;
  auto logp = [&](const Vector& x, Vector* grad) { return t.log_density_kernel(x, grad, s); };
  Vector m = mu, grad(2);
  double lp = logp(m, &grad);
  const int n = 100000;
  Matrix chain(n, 2);
  long acc = 0;
  for (int i = 0; i < n; ++i) {
    acc += k.advance(logp, m, lp, grad, rng);
    chain.row(i) = m.transpose();
  }
  const double rate = static_cast<double>(acc) / n;
  CHECK(rate > 0.0);
  CHECK(rate < 1.0);
  const Vector se = batch_se(chain);
  const Vector err = (oracle::column_mean(chain) - mu).cwiseAbs();
  CHECK(err[0] < 3.0 * se[0]);
  CHECK(err[1] < 3.0 * se[1]);

  const MalaResult tiny = mala_precond_sample(t, mu, 1e-8, 1000, Matrix::Identity(2, 2), rng);
  CHECK(tiny.acceptance_rate() > 0.99);
  CHECK_THROWS_AS(mala_precond_sample(t, mu, 0.1, 10, -Matrix::Identity(2, 2), rng), Error);
}

TEST_CASE("MALA preserves a bimodal 1-D target") {
  // 0.5 N(-2, 0.5) + 0.5 N(2, 0.5)
  auto logp = [](const Vector& x, Vector* grad) {
    const double a = -0.5 * (x[0] + 2.0) * (x[0] + 2.0) / 0.5;
    const double b = -0.5 * (x[0] - 2.0) * (x[0] - 2.0) / 0.5;
    const double mx = std::max(a, b);
    const double wa = std::exp(a - mx), wb = std::exp(b - mx);
    (*grad)[0] = (wa * (-(x[0] + 2.0) / 0.5) + wb * (-(x[0] - 2.0) / 0.5)) / (wa + wb);
    return mx + std::log(wa + wb);
  };
  MalaKernel k(Matrix::Identity(1, 1), 0.6);
  Rng rng(13);
  Vector m = Vector::Zero(1), grad(1);
  double lp = logp(m, &grad);
  const double lo = -6.0, hi = 6.0;
  const int bins = 60;
  std::vector<double> hist(bins, 0.0);
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    k.advance(logp, m, lp, grad, rng);
    const int b = static_cast<int>((m[0] - lo) / (hi - lo) * bins);
    if (b >= 0 && b < bins) hist[b] += 1.0 / n;
  }
  // Grid quadrature of the density per bin.
  double tv = 0.0;
  const double bw = (hi - lo) / bins;
  for (int b = 0; b < bins; ++b) {
    double mass = 0.0;
    const int sub = 200;
    for (int j = 0; j < sub; ++j) {
      const double x = lo + bw * (b + (j + 0.5) / sub);
      mass += (0.5 * std::exp(-(x + 2.0) * (x + 2.0)) + 0.5 * std::exp(-(x - 2.0) * (x - 2.0))) / std::sqrt(M_PI) *
              bw / sub;
    }
    tv += 0.5 * std::abs(mass - hist[b]);
  }
  CHECK(tv < 0.02);
}

TEST_CASE("RTO is exact on linear-Gaussian targets") {
  std::mt19937_64 g(14);
  SamplerConfig cfg;
  struct Case {
    Problem p;
    double var;
  };
  const Matrix A = Matrix::NullaryExpr(6, 10, [&] { return oracle::randn(g, 1)[0]; });
  const std::vector<Case> cases{{make_inpainting(0.1), 0.5}, {make_inpainting(5.0), 4.0}, {Problem::linear(A, 0.7), 1.3}};
  for (const Case& c : cases) {
    const Vector mu = oracle::randn(g, 10, 2.0);
    const Vector y = oracle::randn(g, c.p.meas_dim(), 2.0);
    const PredictionTarget t(c.p, y, iso(mu, c.var));
    Vector mean;
    Matrix cov;
    linear_posterior(c.p.op(), c.p.tau(), y, mu, t.denoise().covariance, mean, cov);
    Rng rng(15);
    const int n = 100000;
    Matrix x(n, 10);
    for (int i = 0; i < n; ++i) x.row(i) = rto_sample(t, mu, rng, cfg).m.transpose();
    const Vector se = cov.diagonal().cwiseSqrt() / std::sqrt(static_cast<double>(n));
    CHECK(((oracle::column_mean(x) - mean).cwiseAbs().array() < 3.0 * se.array()).all());
    CHECK((oracle::sample_cov(x) - cov).norm() / cov.norm() < 0.02);
  }
}

TEST_CASE("RTO limits") {
  std::mt19937_64 g(16);
  const Problem p = make_inpainting(0.1);
  const Vector mu = oracle::randn(g, 10);
  const Vector y = oracle::randn(g, 8);
  SamplerConfig cfg;
  Rng rng(17);
  const PredictionTarget tight(p, y, iso(mu, 1e-12));
  CHECK((rto_sample(tight, mu, rng, cfg).m - mu).norm() < 1e-5);

  const PredictionTarget t(p, y, iso(mu, 0.4));
  CHECK(rto_solve(t, mu, y, mu, cfg).m == solve_map(t, mu, cfg).m);
  const Problem xr = make_xray();
  const PredictionTarget tx(xr, Vector::Constant(15, 950.0), iso(mu, 0.4));
  SamplerConfig lb;
  lb.map_solver = MapSolver::kLbfgs;
  CHECK((rto_solve(tx, mu, tx.y(), mu, lb).m - solve_map(tx, mu, lb).m).norm() == 0.0);
}

TEST_CASE("samplers are deterministic in the seed") {
  const AnalyticScore sp(benchmark_prior());
  const Problem xr = make_xray();
  Rng r(18);
  const Measurement me = xr.simulate(benchmark_prior(), r);
  const PredictionTarget t(xr, me.y, build_denoise_approx({DenoiseVariant::kTC, 1.0, 5}, sp, me.m_true, 0.5));
  SamplerConfig cfg;
  Rng a(19), b(19);
  CHECK(rto_sample(t, me.m_true, a, cfg).m == rto_sample(t, me.m_true, b, cfg).m);
  Rng c(20), d(20);
  const Matrix M = Matrix::Identity(10, 10) + xr.gauss_newton_hessian(me.m_true, me.y);
  CHECK(mala_precond_sample(t, me.m_true, 0.05, 50, M, c).state == mala_precond_sample(t, me.m_true, 0.05, 50, M, d).state);
}

TEST_CASE("preconditioner assembly") {
  const GaussianMixture prior = benchmark_prior();
  const auto pts = representative_points(prior, 32);
  CHECK(pts.size() == 32);
  CHECK(pts[0] == prior.component(0).mean);
  const Matrix H = average_gauss_newton(make_phase_retrieval(), pts);
  CHECK((H - H.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(H).eigenvalues().minCoeff() > -1e-10);
  const Problem lin = make_inpainting(0.1);
  CHECK((average_gauss_newton(lin, pts) - lin.op().transpose() * lin.op() / 0.01).norm() < 1e-9);
}

}  // TEST_SUITE
