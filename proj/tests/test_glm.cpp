#include <doctest.h>

#include <random>

#include "fedcausal/glm.hpp"
#include "oracles.hpp"

using namespace fedcausal;

namespace {

struct LogitData {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

LogitData logit_data(Eigen::Index n, unsigned seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  LogitData d{Eigen::MatrixXd(n, 2), Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    d.x(i, 0) = z(eng);
    d.x(i, 1) = z(eng);
    const double eta = -0.3 + 0.8 * d.x(i, 0) - 0.5 * d.x(i, 1);
    d.y[i] = u(eng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  return d;
}

}  // namespace

TEST_CASE("feature maps") {
  Eigen::VectorXd x(2);
  x << 2.0, -1.0;
  const FeatureMap lin{FeatureTransform::Identity, Basis::Linear};
  const FeatureMap quad{FeatureTransform::Identity, Basis::Quadratic};
  const FeatureMap drop{FeatureTransform::DropLast, Basis::Linear};
  const FeatureMap ex{FeatureTransform::Exponentiate, Basis::Linear};
  CHECK(lin.dim(2) == 3);
  CHECK(quad.dim(2) == 5);
  CHECK(quad.row(x)[3] == doctest::Approx(4.0));
  CHECK(drop.row(x).size() == 2);
  CHECK(ex.row(x)[1] == doctest::Approx(std::exp(2.0)));
}

TEST_CASE("logistic fit agrees with a plain Newton solver") {
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const LogitData d = logit_data(800, seed);
    const GlmModel m = fit_logistic(d.x, d.y);
    const Eigen::VectorXd ref = oracle::logistic_newton(oracle::with_intercept(d.x, false), d.y);
    CHECK((m.coef - ref).norm() < 1e-8);
    CHECK_FALSE(m.converged_via_ridge);
  }
}

TEST_CASE("block statistics sum to the pooled statistics") {
  const LogitData d = logit_data(300, 9);
  const Eigen::MatrixXd z = oracle::with_intercept(d.x, false);
  Eigen::VectorXd beta(3);
  beta << 0.1, -0.2, 0.3;
  LogisticStats a = logistic_stats(z.topRows(120), d.y.head(120), beta);
  a += logistic_stats(z.bottomRows(180), d.y.tail(180), beta);
  const LogisticStats all = logistic_stats(z, d.y, beta);
  CHECK((a.gradient - all.gradient).norm() < 1e-9);
  CHECK((a.hessian - all.hessian).norm() < 1e-9);
  CHECK(a.n == 300);
}

TEST_CASE("separated labels fall back to a ridge fit") {
  Eigen::MatrixXd x(40, 1);
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = i - 19.5;
    y[i] = i >= 20 ? 1.0 : 0.0;
  }
  const GlmModel m = fit_logistic(x, y);
  CHECK(m.converged_via_ridge);
  CHECK(std::isfinite(m.coef.norm()));
}

TEST_CASE("single-class labels are rejected") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 1);
  try {
    fit_logistic(x, Eigen::VectorXd::Ones(10));
    FAIL("expected SingleClassLabels");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingleClassLabels);
  }
}

TEST_CASE("least squares agrees with the normal equations") {
  std::mt19937_64 eng(4);
  std::normal_distribution<double> z;
  Eigen::MatrixXd x(200, 2);
  Eigen::VectorXd y(200);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = z(eng);
    x(i, 1) = z(eng);
    y[i] = 1.0 + 2.0 * x(i, 0) - x(i, 1) + 0.5 * x(i, 0) * x(i, 0) + z(eng);
  }
  const GlmModel m = fit_glm(Family::Linear, {FeatureTransform::Identity, Basis::Quadratic}, x, y);
  const Eigen::VectorXd ref = oracle::ols(oracle::with_intercept(x, true), y);
  CHECK((m.coef - ref).norm() < 1e-9);

  LinearStats s = linear_stats(oracle::with_intercept(x, true).topRows(50), y.head(50));
  s += linear_stats(oracle::with_intercept(x, true).bottomRows(150), y.tail(150));
  CHECK((solve_normal_equations(s) - ref).norm() < 1e-9);
}

TEST_CASE("rank-deficient normal equations are reported") {
  Eigen::MatrixXd z(5, 2);
  z.col(0).setOnes();
  z.col(1).setOnes();
  try {
    solve_normal_equations(linear_stats(z, Eigen::VectorXd::Ones(5)));
    FAIL("expected RankDeficient");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RankDeficient);
  }
}
