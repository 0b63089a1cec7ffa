#include <doctest.h>

#include "bipsda/gmm.hpp"
#include "bipsda/harness/io.hpp"
#include "oracles.hpp"

using namespace bipsda;

namespace {

GaussianMixture one_d(std::vector<double> w, std::vector<double> mu, std::vector<double> var) {
  std::vector<GaussianComponent> c;
  for (std::size_t i = 0; i < w.size(); ++i)
    c.push_back({w[i], Vector::Constant(1, mu[i]), Matrix::Constant(1, 1, var[i])});
  return GaussianMixture(c);
}

Vector v1(double x) { return Vector::Constant(1, x); }

}  // namespace

TEST_SUITE("core-gmm") {

TEST_CASE("log density of simple 1-D mixtures") {
  CHECK(gmm_log_density(one_d({1.0}, {0.0}, {1.0}), v1(0.0)) == doctest::Approx(-0.9189385332046727).epsilon(1e-14));
  CHECK(gmm_log_density(one_d({0.5, 0.5}, {-1.0, 1.0}, {1.0, 1.0}), v1(0.0)) ==
        doctest::Approx(-1.4189385332046727).epsilon(1e-14));
}

TEST_CASE("benchmark prior density at the origin matches per-component oracle") {
  const GaussianMixture p = benchmark_prior();
  const Vector m = Vector::Zero(10);
  double s = 0.0;
  for (const auto& c : p.components()) s += c.weight * std::exp(oracle::gaussian_log_pdf(m, c.mean, c.covariance));
  CHECK(gmm_log_density(p, m) == doctest::Approx(std::log(s)).epsilon(1e-12));
}

TEST_CASE("benchmark prior structure") {
  const GaussianMixture p = benchmark_prior();
  REQUIRE(p.size() == 3);
  CHECK(p.component(0).weight == 0.4);
  CHECK(p.component(1).weight == 0.3);
  CHECK(p.component(2).weight == 0.3);
  CHECK(p.component(0).mean.isApprox(Vector::Constant(10, -5.0)));
  CHECK(p.component(2).mean.isApprox(Vector::Constant(10, 5.0)));
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(p.component(2).covariance).eigenvalues();
  const Vector lin = Vector::LinSpaced(10, 1.0, 2.0);
  CHECK((ev - lin).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_FALSE(p.component(2).covariance.isDiagonal(1e-3));
}

TEST_CASE("construction rejects invalid mixtures") {
  CHECK_THROWS_AS(one_d({0.5, 0.6}, {0, 1}, {1, 1}), Error);
  CHECK_THROWS_AS(one_d({1.0}, {0}, {-1}), Error);
  CHECK_THROWS_AS(GaussianMixture({{1.0, Vector::Zero(2), Matrix::Identity(3, 3)}}), Error);
  try {
    one_d({1.0}, {0}, {0.0});
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNotPositiveDefinite);
  }
  CHECK_THROWS_AS(gmm_log_density(benchmark_prior(), Vector::Zero(3)), Error);
}

TEST_CASE("sampling: moments, occupancy, determinism") {
  {
    GaussianMixture g({{1.0, Vector::Zero(3), Matrix::Identity(3, 3)}});
    Rng rng(1);
    const Matrix x = gmm_sample(g, 100000, rng);
    CHECK(oracle::column_mean(x).cwiseAbs().maxCoeff() < 0.02);
  }
  const GaussianMixture p = benchmark_prior();
  Rng rng(7);
  const Matrix x = gmm_sample(p, 100000, rng);
  int counts[3] = {0, 0, 0};
  for (Index i = 0; i < x.rows(); ++i) {
    const double s = x.row(i).mean();
    counts[s < -2.5 ? 0 : (s > 2.5 ? 2 : 1)]++;
  }
  CHECK(std::abs(counts[0] / 1e5 - 0.4) < 0.01);
  CHECK(std::abs(counts[1] / 1e5 - 0.3) < 0.01);
  CHECK(std::abs(counts[2] / 1e5 - 0.3) < 0.01);
  Rng a(99), b(99);
  CHECK((gmm_sample(p, 50, a).array() == gmm_sample(p, 50, b).array()).all());
}

TEST_CASE("noisy mixture algebra") {
  const GaussianMixture p = benchmark_prior();
  const GaussianMixture same = noisy_mixture(p, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(same.component(i).covariance == p.component(i).covariance);
  CHECK(noisy_mixture(one_d({1.0}, {0.0}, {1.0}), 2.0).component(0).covariance(0, 0) == 5.0);
}

TEST_CASE("noisy mixture at large sigma matches forward-noised prior draws") {
  const GaussianMixture p = benchmark_prior();
  const double sigma = 10.0;
  Rng r1(3), r2(4);
  const Matrix a = gmm_sample(noisy_mixture(p, sigma), 100000, r1);
  Matrix b = gmm_sample(p, 100000, r2);
  for (Index i = 0; i < b.rows(); ++i) b.row(i) += sigma * r2.normal_vector(10).transpose();
  const double se = sigma / std::sqrt(1e5);
  CHECK((oracle::column_mean(a) - oracle::column_mean(b)).cwiseAbs().maxCoeff() < 6 * se * std::sqrt(2.0) + 0.05);
  const Matrix ca = oracle::sample_cov(a), cb = oracle::sample_cov(b);
  CHECK((ca - cb).norm() / cb.norm() < 0.02);
}

TEST_CASE("noisy score: simple cases") {
  CHECK(noisy_score(one_d({1.0}, {0.0}, {1.0}), v1(2.0), 1.0)[0] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(noisy_score(one_d({0.5, 0.5}, {-2.0, 2.0}, {1.5, 1.5}), v1(0.0), 0.7)[0] == doctest::Approx(0.0));
}

TEST_CASE("noisy score and Jacobian match finite differences over random pairs") {
  const GaussianMixture p = benchmark_prior();
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> us(0.05, 10.0);
  double worst_g = 0.0, worst_j = 0.0, worst_sym = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double sigma = us(g);
    const Vector m = oracle::randn(g, 10, 4.0);
    const GaussianMixture noised = noisy_mixture(p, sigma);
    const Vector fd = oracle::fd_gradient([&](const Vector& x) { return gmm_log_density(noised, x); }, m);
    worst_g = std::max(worst_g, oracle::rel_err(noisy_score(p, m, sigma), fd));
    const Matrix J = noisy_score_jacobian(p, m, sigma);
    const Matrix fdj = oracle::fd_jacobian([&](const Vector& x) { return noisy_score(p, x, sigma); }, m);
    worst_j = std::max(worst_j, (J - fdj).cwiseAbs().maxCoeff());
    worst_sym = std::max(worst_sym, (J - J.transpose()).cwiseAbs().maxCoeff());
  }
  CHECK(worst_g < 1e-5);
  CHECK(worst_j < 1e-5);
  CHECK(worst_sym <= 1e-12);
}

TEST_CASE("single Gaussian Jacobian is the negative noised precision") {
  std::mt19937_64 g(5);
  const Matrix S = oracle::random_spd(g, 4);
  GaussianMixture one({{1.0, oracle::randn(g, 4), S}});
  const Matrix want = -(S + 0.25 * Matrix::Identity(4, 4)).inverse();
  for (int k = 0; k < 3; ++k) CHECK((noisy_score_jacobian(one, oracle::randn(g, 4, 5.0), 0.5) - want).norm() < 1e-10);
}

TEST_CASE("far-field score stays finite") {
  const GaussianMixture p = benchmark_prior();
  std::mt19937_64 g(2);
  Vector m = oracle::randn(g, 10);
  m *= 1e3 / m.norm();
  CHECK(noisy_score(p, m, 0.0).allFinite());
  CHECK(noisy_score_jacobian(p, m, 0.0).allFinite());
}

TEST_CASE("conditioning: conjugate and uninformative cases") {
  GaussianMixture std3({{1.0, Vector::Zero(3), Matrix::Identity(3, 3)}});
  const GaussianMixture post = gmm_condition_linear(std3, Matrix::Identity(3, 3), Vector::Zero(3), Matrix::Identity(3, 3));
  CHECK(post.component(0).mean.norm() < 1e-14);
  CHECK((post.component(0).covariance - 0.5 * Matrix::Identity(3, 3)).norm() < 1e-14);

  const GaussianMixture p = benchmark_prior();
  const GaussianMixture same = gmm_condition_linear(p, Matrix::Zero(4, 10), Vector::Ones(4), Matrix::Identity(4, 4));
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(same.component(i).weight == doctest::Approx(p.component(i).weight).epsilon(1e-12));
    CHECK((same.component(i).mean - p.component(i).mean).norm() < 1e-12);
    CHECK((same.component(i).covariance - p.component(i).covariance).norm() < 1e-12);
  }
  CHECK_THROWS_AS(gmm_condition_linear(p, Matrix::Zero(2, 10), Vector::Zero(2), -Matrix::Identity(2, 2)), Error);
}

TEST_CASE("conditioning: 1-D posterior moments match grid quadrature") {
  const GaussianMixture prior = one_d({0.3, 0.7}, {-2.0, 1.0}, {0.5, 2.0});
  const GaussianMixture post = gmm_condition_linear(prior, Matrix::Ones(1, 1), v1(3.0), Matrix::Ones(1, 1));
  const int n = 100000;
  const double lo = -20.0, hi = 20.0, h = (hi - lo) / (n - 1);
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h;
    const double prior_pdf = 0.3 * std::exp(oracle::gaussian_log_pdf(v1(x), v1(-2.0), Matrix::Constant(1, 1, 0.5))) +
                             0.7 * std::exp(oracle::gaussian_log_pdf(v1(x), v1(1.0), Matrix::Constant(1, 1, 2.0)));
    const double w = prior_pdf * std::exp(-0.5 * (3.0 - x) * (3.0 - x)) * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
    z += w;
    m1 += w * x;
    m2 += w * x * x;
  }
  m1 /= z;
  m2 /= z;
  double pm = 0.0, pm2 = 0.0;
  for (const auto& c : post.components()) {
    pm += c.weight * c.mean[0];
    pm2 += c.weight * (c.covariance(0, 0) + c.mean[0] * c.mean[0]);
  }
  CHECK(pm == doctest::Approx(m1).epsilon(1e-6));
  CHECK(pm2 - pm * pm == doctest::Approx(m2 - m1 * m1).epsilon(1e-6));
}

TEST_CASE("sequential conditioning equals stacked conditioning") {
  const GaussianMixture p = benchmark_prior();
  std::mt19937_64 g(21);
  const Matrix A1 = Matrix::NullaryExpr(3, 10, [&] { return oracle::randn(g, 1)[0]; });
  const Matrix A2 = Matrix::NullaryExpr(4, 10, [&] { return oracle::randn(g, 1)[0]; });
  const Vector y1 = oracle::randn(g, 3, 3.0), y2 = oracle::randn(g, 4, 3.0);
  const Matrix N1 = oracle::random_spd(g, 3, 1.0), N2 = oracle::random_spd(g, 4, 1.0);
  const GaussianMixture seq = gmm_condition_linear(gmm_condition_linear(p, A1, y1, N1), A2, y2, N2);
  Matrix A(7, 10);
  A << A1, A2;
  Vector y(7);
  y << y1, y2;
  Matrix N = Matrix::Zero(7, 7);
  N.topLeftCorner(3, 3) = N1;
  N.bottomRightCorner(4, 4) = N2;
  const GaussianMixture once = gmm_condition_linear(p, A, y, N);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(std::abs(seq.component(i).weight - once.component(i).weight) < 1e-9);
    CHECK((seq.component(i).mean - once.component(i).mean).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((seq.component(i).covariance - once.component(i).covariance).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("density integrates to one under importance sampling") {
  const GaussianMixture p = benchmark_prior();
  // Proposal: one wide Gaussian covering all components.
  const Matrix S = 40.0 * Matrix::Identity(10, 10);
  GaussianMixture q({{1.0, Vector::Zero(10), S}});
  Rng rng(8);
  const Matrix x = gmm_sample(q, 100000, rng);
  Vector w(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    w[i] = std::exp(gmm_log_density(p, xi) - q.log_density(xi));
  }
  const double mean = w.mean();
  const double se = std::sqrt((w.array() - mean).square().sum() / (w.size() - 1) / w.size());
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("mixture JSON round trip revalidates") {
  const GaussianMixture p = benchmark_prior();
  const GaussianMixture back = io::mixture_from_json(io::mixture_to_json(p));
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(back.component(i).weight == p.component(i).weight);
    CHECK(back.component(i).covariance == p.component(i).covariance);
  }
  io::json j = io::mixture_to_json(p);
  j["components"][0]["weight"] = 0.9;
  CHECK_THROWS_AS(io::mixture_from_json(j), Error);
}

}  // TEST_SUITE
