#include <doctest.h>

#include "bipsda/annealing.hpp"
#include "oracles.hpp"

using namespace bipsda;

namespace {

// Exact moments of m0 | m_t for a Gaussian prior N(mu, S) and m_t = m0 + sigma z.
void gaussian_denoise(const Vector& mu, const Matrix& S, const Vector& mt, double sigma, Vector& mean, Matrix& cov) {
  const Index d = mu.size();
  const Matrix K = S * (S + sigma * sigma * Matrix::Identity(d, d)).inverse();
  mean = mu + K * (mt - mu);
  cov = S - K * S;
  cov = 0.5 * (cov + cov.transpose());
}

}  // namespace

TEST_SUITE("annealing") {

TEST_CASE("schedule grid") {
  const NoiseSchedule lin(10.0, 4, 1.0);
  const std::vector<double> want{10.0, 7.5, 5.0, 2.5, 0.0};
  CHECK(lin.timesteps() == want);
  for (double rho : {0.5, 1.0, 2.0, 3.3, 7.0, 11.0}) {
    for (int n : {1, 2, 7, 200}) {
      for (double T : {0.1, 1.0, 10.0, 123.0}) {
        const NoiseSchedule s(T, n, rho);
        const auto ts = s.timesteps();
        REQUIRE(ts.size() == static_cast<std::size_t>(n + 1));
        CHECK(ts.front() == T);
        CHECK(ts.back() == 0.0);
        for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
      }
    }
  }
  CHECK(NoiseSchedule(10.0, 200, 7.0).timesteps().size() == 201);
  CHECK(NoiseSchedule::sigma(0.0) == 0.0);
  CHECK_THROWS_AS(NoiseSchedule(0.0, 5, 1.0), Error);
  CHECK_THROWS_AS(NoiseSchedule(1.0, 0, 1.0), Error);
  CHECK_THROWS_AS(NoiseSchedule(1.0, 5, 0.0), Error);
}

TEST_CASE("Tweedie mean") {
  const AnalyticScore sp(benchmark_prior());
  std::mt19937_64 g(1);
  const Vector mt = oracle::randn(g, 10, 3.0);
  CHECK(tweedie_mean(sp, mt, 0.0) == mt);

  const Vector mu = oracle::randn(g, 4);
  const Matrix S = oracle::random_spd(g, 4);
  const AnalyticScore one(GaussianMixture({{1.0, mu, S}}));
  for (double sigma : {0.1, 1.0, 3.0}) {
    const Vector x = oracle::randn(g, 4, 2.0);
    Vector mean;
    Matrix cov;
    gaussian_denoise(mu, S, x, sigma, mean, cov);
    CHECK((tweedie_mean(one, x, sigma) - mean).norm() < 1e-10);
    CHECK((tc_covariance(one, x, sigma, false) - cov).norm() < 1e-10);
  }
}

TEST_CASE("Tweedie mean on the benchmark prior matches importance sampling") {
  const GaussianMixture prior = benchmark_prior();
  const AnalyticScore sp(prior);
  const double sigma = 0.1;
  std::mt19937_64 g(2);
  const Vector mt = oracle::randn(g, 10, 0.3);
  // Proposal N(m_t, sigma^2 I) is the likelihood factor, so weights are prior(m0).
  const int n = 200000;
  Vector num = Vector::Zero(10);
  std::vector<double> lw(n);
  Matrix draws(10, n);
  for (int i = 0; i < n; ++i) {
    draws.col(i) = mt + oracle::randn(g, 10, sigma);
    lw[i] = gmm_log_density(prior, draws.col(i));
  }
  const double mx = *std::max_element(lw.begin(), lw.end());
  double den = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = std::exp(lw[i] - mx);
    num += w * draws.col(i);
    den += w;
  }
  CHECK((tweedie_mean(sp, mt, sigma) - num / den).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("TC covariance") {
  const AnalyticScore one(GaussianMixture({{1.0, Vector::Zero(1), Matrix::Identity(1, 1)}}));
  CHECK(tc_covariance(one, Vector::Constant(1, 0.3), 1.0)(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

  const AnalyticScore sp(benchmark_prior());
  std::mt19937_64 g(3);
  for (int k = 0; k < 10; ++k) {
    const Vector mt = oracle::randn(g, 10, 4.0);
    const Matrix C = tc_covariance(sp, mt, 1.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(C).eigenvalues().minCoeff() >= 0.0);
    const Matrix fdJ = oracle::fd_jacobian([&](const Vector& x) { return sp.score(x, 1.0); }, mt);
    const Matrix raw = Matrix::Identity(10, 10) + fdJ;
    CHECK((tc_covariance(sp, mt, 1.0, false) - 0.5 * (raw + raw.transpose())).cwiseAbs().maxCoeff() < 1e-5);
  }
  const double s = 1e-4;
  const Matrix small = tc_covariance(sp, oracle::randn(g, 10, 4.0), s);
  CHECK(small.cwiseAbs().maxCoeff() <= s * s * (1.0 + 1e-9));

  const ZeroScore zs(10);
  CHECK_THROWS_AS(tc_covariance(zs, Vector::Zero(10), 1.0), Error);
  try {
    tc_covariance(zs, Vector::Zero(10), 1.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kVariantUnsupported);
  }
}

TEST_CASE("single Euler step of the ODE is the Tweedie mean") {
  const AnalyticScore sp(benchmark_prior());
  std::mt19937_64 g(4);
  const NoiseSchedule sched;
  for (int i = 1; i <= sched.num_steps(); i += 7) {
    const double t = sched.t(i);
    const Vector mt = oracle::randn(g, 10, 1.0 + t);
    CHECK((ode_mean(sp, mt, t, 1) - tweedie_mean(sp, mt, t)).norm() <= 1e-12 * (1.0 + mt.norm()));
  }
}

TEST_CASE("ODE mean converges toward the Gaussian conditional mean") {
  std::mt19937_64 g(5);
  const Vector mu = oracle::randn(g, 3);
  const Matrix S = oracle::random_spd(g, 3);
  const AnalyticScore one(GaussianMixture({{1.0, mu, S}}));
  const Vector mt = oracle::randn(g, 3, 3.0);
  // The probability-flow ODE maps m_t to the transported point; for a Gaussian
  // prior it is mu + (S)^{1/2} (S + t^2 I)^{-1/2} (m_t - mu).
  const double t = 2.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  const Vector lam = es.eigenvalues();
  Vector ratio(3);
  for (int i = 0; i < 3; ++i) ratio[i] = std::sqrt(lam[i] / (lam[i] + t * t));
  const Vector exact = mu + es.eigenvectors() * ratio.asDiagonal() * es.eigenvectors().transpose() * (mt - mu);
  const double e5 = (ode_mean(one, mt, t, 5) - exact).norm();
  const double e500 = (ode_mean(one, mt, t, 500) - exact).norm();
  CHECK(e500 < e5);
  CHECK(e500 < 1e-2);
  const ZeroScore zs(3);
  CHECK(ode_mean(zs, mt, t, 5) == mt);
}

TEST_CASE("denoising approximations") {
  const AnalyticScore sp(benchmark_prior());
  std::mt19937_64 g(6);
  const Vector mt = oracle::randn(g, 10, 3.0);
  DenoiseApprox tu;
  const GaussianDist d = build_denoise_approx(tu, sp, mt, 2.0);
  CHECK(d.covariance == 4.0 * Matrix::Identity(10, 10));
  DenoiseApprox ode{DenoiseVariant::kODE, 1.0, 1};
  const GaussianDist d1 = build_denoise_approx(ode, sp, mt, 2.0);
  CHECK((d1.mean - d.mean).norm() <= 1e-12 * (1.0 + mt.norm()));
  CHECK(d1.covariance == d.covariance);

  const Vector mu = oracle::randn(g, 4);
  const Matrix S = oracle::random_spd(g, 4);
  const AnalyticScore one(GaussianMixture({{1.0, mu, S}}));
  const Vector x = oracle::randn(g, 4, 2.0);
  Vector mean;
  Matrix cov;
  gaussian_denoise(mu, S, x, 0.7, mean, cov);
  const GaussianDist tc = build_denoise_approx({DenoiseVariant::kTC, 1.0, 5}, one, x, 0.7);
  CHECK((tc.mean - mean).norm() < 1e-10);
  CHECK((tc.covariance - cov).norm() < 1e-10);

  for (auto v : {DenoiseVariant::kODE, DenoiseVariant::kTU, DenoiseVariant::kTC}) {
    for (double t : {0.01, 0.5, 3.0, 10.0}) {
      const Matrix C = build_denoise_approx({v, 1.0, 5}, sp, oracle::randn(g, 10, 4.0), t).covariance;
      CHECK((C - C.transpose()).norm() == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(C).eigenvalues().minCoeff() >= 0.0);
    }
  }
  CHECK_THROWS_AS(build_denoise_approx({DenoiseVariant::kTU, 0.0, 5}, sp, mt, 1.0), Error);
  CHECK_THROWS_AS(build_denoise_approx({DenoiseVariant::kODE, 1.0, 0}, sp, mt, 1.0), Error);
  CHECK(denoise_variant_from_string("TC") == DenoiseVariant::kTC);
}

}  // TEST_SUITE
