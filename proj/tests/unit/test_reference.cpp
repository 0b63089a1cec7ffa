#include <doctest.h>

#include "bipsda/metrics.hpp"
#include "bipsda/reference.hpp"
#include "oracles.hpp"

using namespace bipsda;

namespace {

// Index of the prior component with the highest weighted density at each row.
std::vector<double> occupancy(const GaussianMixture& g, const Matrix& x) {
  std::vector<double> occ(g.size(), 0.0);
  for (Index r = 0; r < x.rows(); ++r) {
    std::size_t best = 0;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto& c = g.component(k);
      const double lp = std::log(c.weight) + oracle::gaussian_log_pdf(x.row(r).transpose(), c.mean, c.covariance);
      if (lp > best_lp) {
        best_lp = lp;
        best = k;
      }
    }
    occ[best] += 1.0;
  }
  for (double& o : occ) o /= static_cast<double>(x.rows());
  return occ;
}

void mixture_moments(const GaussianMixture& g, Vector& mean, Matrix& cov) {
  mean = Vector::Zero(g.dim());
  for (const auto& c : g.components()) mean += c.weight * c.mean;
  cov = Matrix::Zero(g.dim(), g.dim());
  for (const auto& c : g.components()) cov += c.weight * (c.covariance + (c.mean - mean) * (c.mean - mean).transpose());
}

Matrix iid_chain(std::mt19937_64& g, Index n, Index d) {
  std::normal_distribution<double> z;
  return Matrix::NullaryExpr(n, d, [&] { return z(g); });
}

ChainSet chainset(std::vector<Matrix> chains, double burn_in = 0.0) {
  ChainSet cs;
  cs.chains = std::move(chains);
  cs.burn_in = burn_in;
  return cs;
}

}  // namespace

TEST_SUITE("reference") {

TEST_CASE("exact sampler: uninformative operator returns the prior") {
  const GaussianMixture prior = benchmark_prior();
  const Problem p = Problem::linear(Matrix::Zero(8, 10), 1.0);
  const ReferenceResult r = exact_posterior_sample(prior, p, Vector::Zero(8), 100000, 1);
  CHECK(r.batch.reference);
  CHECK(r.diagnostics.exact);
  REQUIRE(r.batch.samples.rows() == 100000);
  const auto occ = occupancy(prior, r.batch.samples);
  for (std::size_t k = 0; k < prior.size(); ++k) CHECK(std::abs(occ[k] - prior.component(k).weight) < 0.01);
  CHECK(std::abs(r.diagnostics.weights.normalized_weights.sum() - 1.0) < 1e-12);
}

TEST_CASE("exact sampler: full observation at tiny noise concentrates on y") {
  const double tau = 1e-4;
  const Problem p = Problem::linear(Matrix::Identity(10, 10), tau);
  const Vector y = Vector::LinSpaced(10, -1.0, 1.0);
  const ReferenceResult r = exact_posterior_sample(benchmark_prior(), p, y, 2000, 2);
  CHECK((r.batch.samples.rowwise() - y.transpose()).rowwise().norm().maxCoeff() < 5.0 * tau * std::sqrt(10.0));
  CHECK_THROWS_AS(exact_posterior_sample(benchmark_prior(), make_xray(), Vector::Constant(15, 900.0), 10, 3), Error);
}

TEST_CASE("exact sampler: two independent references agree at the sampling-noise level") {
  const GaussianMixture prior = benchmark_prior();
  const Problem p = make_inpainting(0.1);
  Rng rng(4);
  std::vector<Matrix> a, b;
  for (int t = 0; t < 4; ++t) {
    const Vector y = p.simulate(prior, rng).y;
    a.push_back(exact_posterior_sample(prior, p, y, 10000, 5 + 2 * t).batch.samples);
    b.push_back(exact_posterior_sample(prior, p, y, 10000, 6 + 2 * t).batch.samples);
  }
  const double alpha = estimate_alpha(a);
  double c = 0.0, m = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    c += cmd(b[t], a[t], {5, alpha}) / 4.0;
    MmdConfig mc;
    mc.base_bandwidth = estimate_base_bandwidth(a[t]);
    m += mmd(b[t], a[t], mc) / 4.0;
  }
  INFO("cmd " << c << " mmd " << m);
  CHECK(c > 0.3 * 0.01);
  CHECK(c < 2.0 * 0.01);
  CHECK(m > 0.3 * 0.001);
  CHECK(m < 2.0 * 0.001);
}

TEST_CASE("reference MCMC on a linear problem matches the exact posterior") {
  const GaussianMixture prior = benchmark_prior();
  const Problem p = make_inpainting(5.0);
  // Between the first two component means, so both carry posterior mass.
  const Vector y = Vector::Constant(8, -2.5);
  const GaussianMixture post = gmm_condition_linear(prior, p.op(), y, 25.0 * Matrix::Identity(8, 8));
  ReferenceConfig rc;
  rc.iterations = 20000;
  rc.importance_draws = 200000;
  const std::size_t n = 4000;
  const ReferenceResult r = reference_mcmc(prior, p, y, n, 7, rc);
  const Vector& w = r.diagnostics.weights.normalized_weights;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    INFO("component " << k << " mcmc " << w[static_cast<Index>(k)] << " exact " << post.component(k).weight);
    CHECK(std::abs(w[static_cast<Index>(k)] - post.component(k).weight) < 0.01);
  }
  CHECK(std::abs(w.sum() - 1.0) < 1e-12);
  CHECK(r.diagnostics.max_rhat < 1.01);
  Vector mean;
  Matrix cov;
  mixture_moments(post, mean, cov);
  const Vector se = cov.diagonal().cwiseSqrt() / std::sqrt(static_cast<double>(n));
  const Vector got = oracle::column_mean(r.batch.samples);
  INFO("z " << ((got - mean).array() / se.array()).transpose());
  CHECK(((got - mean).cwiseAbs().array() < 3.0 * se.array()).all());

  // CMD against an exact reference stays below twice the two-reference baseline.
  const Matrix e1 = exact_posterior_sample(prior, p, y, n, 8).batch.samples;
  const Matrix e2 = exact_posterior_sample(prior, p, y, n, 9).batch.samples;
  const CmdConfig cc{5, estimate_alpha({e1})};
  CHECK(cmd(r.batch.samples, e1, cc) < 2.0 * cmd(e2, e1, cc) + 1e-3);
}

TEST_CASE("reference MCMC with a flat likelihood recovers the prior weights") {
  const GaussianMixture prior = benchmark_prior();
  const Problem p = make_inpainting(1e6);
  ReferenceConfig rc;
  rc.iterations = 4000;
  rc.importance_draws = 200000;
  const ReferenceResult r = reference_mcmc(prior, p, Vector::Zero(8), 500, 10, rc);
  for (std::size_t k = 0; k < prior.size(); ++k)
    CHECK(std::abs(r.diagnostics.weights.normalized_weights[static_cast<Index>(k)] - prior.component(k).weight) < 0.01);
}

TEST_CASE("x-ray reference passes the convergence gate") {
  const GaussianMixture prior = benchmark_prior();
  const Problem p = make_xray();
  Rng rng(11);
  const Vector y = p.simulate(prior, rng).y;
  const std::size_t n_eval = 2000;
  const ReferenceResult r = reference_sample(prior, p, y, n_eval, 12);
  CHECK_FALSE(r.diagnostics.exact);
  CHECK(r.batch.samples.rows() == static_cast<Index>(n_eval));
  CHECK(r.diagnostics.max_rhat < 1.01);
  CHECK(r.diagnostics.min_ess > static_cast<double>(n_eval));
  CHECK(std::abs(r.diagnostics.weights.normalized_weights.sum() - 1.0) < 1e-12);
  CHECK(r.batch.samples.allFinite());
}

TEST_CASE("an unconverged reference raises ConvergenceError with diagnostics") {
  const GaussianMixture prior = benchmark_prior();
  const Problem p = make_phase_retrieval();
  Rng rng(13);
  const Vector y = p.simulate(prior, rng).y;
  ReferenceConfig rc;
  rc.iterations = 40;
  rc.importance_draws = 2000;
  rc.initial_step = 1e-4;
  rc.rhat_gate = 1.0 + 1e-9;
  try {
    reference_mcmc(prior, p, y, 100, 14, rc);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.code() == ErrorCode::kConvergenceNotReached);
    CHECK(static_cast<int>(e.code()) == 6);
    CHECK(e.diagnostics().max_rhat >= rc.rhat_gate);
    CHECK(e.diagnostics().rhat.size() == 10);
    CHECK(std::abs(e.diagnostics().weights.normalized_weights.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("component weights stay on the simplex") {
  std::mt19937_64 g(15);
  for (int k = 0; k < 50; ++k) {
    const Vector lw = oracle::randn(g, 3, 300.0);
    const ComponentWeightEstimate e = ComponentWeightEstimate::from_log_weights(lw);
    CHECK(std::abs(e.normalized_weights.sum() - 1.0) < 1e-12);
    CHECK((e.normalized_weights.array() >= 0.0).all());
  }
  const ComponentWeightEstimate shifted = ComponentWeightEstimate::from_log_weights(Vector::Constant(3, -1e4));
  CHECK(shifted.normalized_weights.isApproxToConstant(1.0 / 3.0, 1e-12));
}

TEST_CASE("R-hat") {
  std::mt19937_64 g(16);
  const Matrix one = iid_chain(g, 5000, 2);
  const Vector same = psrf(chainset({one, one, one, one}));
  CHECK((same.array() >= 0.99).all());
  CHECK((same.array() <= 1.01).all());

  const Matrix off = iid_chain(g, 1000, 1).array() + 100.0;
  CHECK(psrf(chainset({iid_chain(g, 1000, 1), off}))[0] > 2.0);

  std::vector<Matrix> ten;
  for (int c = 0; c < 10; ++c) ten.push_back(iid_chain(g, 10000, 3));
  CHECK(psrf(chainset(ten)).maxCoeff() < 1.01);

  // Classic R-hat of already-split chains agrees with the textbook formula.
  std::vector<Vector> raw{iid_chain(g, 100, 1).col(0), iid_chain(g, 100, 1).col(0)};
  std::vector<Vector> halves;
  for (const Vector& c : raw) {
    halves.push_back(c.head(50));
    halves.push_back(c.tail(50));
  }
  const double n = 50.0;
  double wsum = 0.0, mbar = 0.0;
  Vector means(4);
  for (int c = 0; c < 4; ++c) {
    means[c] = halves[c].mean();
    wsum += (halves[c].array() - means[c]).square().sum() / (n - 1.0);
    mbar += means[c] / 4.0;
  }
  const double W = wsum / 4.0;
  const double B = n * (means.array() - mbar).square().sum() / 3.0;
  const double want = std::sqrt(((n - 1.0) / n * W + B / n) / W);
  CHECK(split_rhat_raw(halves) == doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS(psrf(chainset({one})), Error);
  CHECK_THROWS_AS(psrf(chainset({one.topRows(3), one.topRows(3)})), Error);
}

TEST_CASE("ESS") {
  std::mt19937_64 g(17);
  std::vector<Matrix> iid;
  for (int c = 0; c < 4; ++c) iid.push_back(iid_chain(g, 5000, 3));
  const Vector e = ess(chainset(iid));
  CHECK((e.array() >= 0.8 * 20000.0).all());
  CHECK((e.array() <= 1.2 * 20000.0).all());

  const double phi = 0.9;
  std::normal_distribution<double> z;
  std::vector<Matrix> ar;
  for (int c = 0; c < 4; ++c) {
    Matrix x(25000, 1);
    x(0, 0) = z(g) / std::sqrt(1.0 - phi * phi);
    for (Index t = 1; t < x.rows(); ++t) x(t, 0) = phi * x(t - 1, 0) + z(g);
    ar.push_back(x);
  }
  const double ratio = ess(chainset(ar))[0] / 100000.0;
  const double want = (1.0 - phi) / (1.0 + phi);
  CHECK(ratio > 0.5 * want);
  CHECK(ratio < 1.5 * want);

  const Matrix flat = Matrix::Constant(100, 2, 3.0);
  CHECK(ess(chainset({flat, flat})).isZero(0.0));
  CHECK(std::isnan(psrf(chainset({flat, flat}))[0]));

  // Burn-in drops the leading half of each chain.
  const ChainSet half = chainset(iid, 0.5);
  CHECK(half.kept_length() == 2500);
  CHECK(half.first_kept() == 2500);
}

}  // TEST_SUITE
