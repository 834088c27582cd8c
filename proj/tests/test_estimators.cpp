#include <doctest.h>

#include <random>

#include "fedcausal/estimators.hpp"
#include "fedcausal/sim.hpp"
#include "oracles.hpp"

using namespace fedcausal;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

PointNuisance random_point(std::mt19937_64& eng) {
  std::uniform_real_distribution<double> pi(0.2, 0.8), mu(0.5, 4.0), q(0.2, 3.0), var(0.3, 2.0),
      tau(0.5, 3.0);
  PointNuisance v;
  v.sites = {0, 1, 2};
  v.pi = Eigen::Vector3d(pi(eng), pi(eng), pi(eng));
  v.mu0 = Eigen::Vector3d(mu(eng), mu(eng), -mu(eng));
  v.q = Eigen::Vector3d(1.0, q(eng), q(eng));
  v.var1 = Eigen::Vector3d(var(eng), var(eng), var(eng));
  v.var0 = Eigen::Vector3d(var(eng), var(eng), var(eng));
  v.tau = tau(eng);
  return v;
}

// Variance of sum_k R_k H_k as a function of the weights on the simplex.
double c1_objective(const PointNuisance& v, double r0, double r1, double r2) {
  const double t = v.tau;
  const double a0 = v.var1[0] / v.pi[0];
  const double c = t * t * v.var0[0] / (1.0 - v.pi[0]);
  double f = r0 * r0 * a0 + (1.0 - r0) * (1.0 - r0) * c;
  const double r[3] = {r0, r1, r2};
  for (int k = 1; k <= 2; ++k) {
    const double ratio = v.mu0[0] / v.mu0[k];
    const double ak = v.q[k] * (v.var1[k] / v.pi[k] * ratio * ratio +
                                v.var0[k] * t * t * ratio * ratio / (1.0 - v.pi[k]));
    f += r[k] * r[k] * ak;
  }
  return f;
}

double c2_objective(const PointNuisance& v, double r0, double r1, double r2) {
  const double r[3] = {r0, r1, r2};
  double f = 0.0;
  for (int k = 0; k < 3; ++k) f += r[k] * r[k] * v.q[k] * v.var1[k] / v.pi[k];
  return f;
}

template <class F>
Eigen::Vector3d grid_minimizer(F f) {
  Eigen::Vector3d best(1, 0, 0);
  double fb = f(1.0, 0.0, 0.0);
  const int steps = 1000;
  for (int i = 0; i <= steps; ++i) {
    for (int j = 0; i + j <= steps; ++j) {
      const double r0 = i / double(steps), r1 = j / double(steps), r2 = 1.0 - r0 - r1;
      const double val = f(r0, r1, r2);
      if (val < fb) {
        fb = val;
        best = Eigen::Vector3d(r0, r1, r2);
      }
    }
  }
  return best;
}

// Classical target-only AIPW of the risk ratio from given prediction vectors.
double aipw_ratio(const SiteDataset& s, const Eigen::VectorXd& pi, const Eigen::VectorXd& mu0,
                  const Eigen::VectorXd& mu1) {
  double s1 = 0.0, s0 = 0.0;
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    const double a = s.a()[i], y = s.y()[i];
    s1 += mu1[i] + a * (y - mu1[i]) / pi[i];
    s0 += mu0[i] + (1 - a) * (y - mu0[i]) / (1 - pi[i]);
  }
  return s1 / s0;
}

}  // namespace

TEST_CASE("shared-effect weights minimize the combined variance") {
  std::mt19937_64 eng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const PointNuisance v = random_point(eng);
    const Eigen::VectorXd w = c1_weights(v);
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.minCoeff() > 0.0);
    const Eigen::Vector3d ref =
        grid_minimizer([&](double a, double b, double c) { return c1_objective(v, a, b, c); });
    CHECK((w - ref).cwiseAbs().maxCoeff() < 2e-3);
    CHECK(c1_objective(v, w[0], w[1], w[2]) <= c1_objective(v, ref[0], ref[1], ref[2]) + 1e-12);
  }
}

TEST_CASE("shared-mean weights minimize the treated variance") {
  std::mt19937_64 eng(18);
  for (int rep = 0; rep < 20; ++rep) {
    const PointNuisance v = random_point(eng);
    const Eigen::VectorXd w = c2_weights(v);
    const Eigen::Vector3d ref =
        grid_minimizer([&](double a, double b, double c) { return c2_objective(v, a, b, c); });
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((w - ref).cwiseAbs().maxCoeff() < 2e-3);
  }
}

TEST_CASE("weights reject control means at the floor") {
  std::mt19937_64 eng(19);
  PointNuisance v = random_point(eng);
  v.mu0[1] = 0.0;
  CHECK(code_of([&] { c1_weights(v); }) == ErrorCode::DomainViolation);
}

TEST_CASE("augmentation terms have mean zero under the generating nuisances") {
  DgpParams p;
  p.n_total = 200000;
  const MultiSiteData d = generate(p, 77);
  const NuisanceBundle b = oracle_bundle(p, {0, 1, 2}, risk_ratio());
  const Eigen::Index n = d.n_total();
  std::vector<std::vector<double>> h(3);
  for (const auto& [k, s] : d.sites()) {
    for (Eigen::Index i = 0; i < s.n(); ++i) {
      const Eigen::VectorXd t = h1_terms(s.row(i), b);
      for (int j = 0; j < 3; ++j) h[static_cast<std::size_t>(j)].push_back(t[j]);
    }
  }
  for (const auto& col : h) {
    CHECK(static_cast<Eigen::Index>(col.size()) == n);
    CHECK(std::abs(oracle::mean(col)) < 4.0 * oracle::sd(col) / std::sqrt(double(n)));
  }
}

TEST_CASE("target-only MR1 equals AIPW with independently fitted nuisances") {
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const MultiSiteData d = generate(DgpParams{}, seed);
    const SiteDataset& s = d.target();
    NuisanceConfig cfg;
    cfg.propensity_clip = 0.0;
    const EstimateReport r = estimate_measure(d, {0}, Method::MR1, risk_ratio(), cfg);

    const Eigen::MatrixXd zl = oracle::with_intercept(s.x(), false);
    const Eigen::MatrixXd zq = oracle::with_intercept(s.x(), true);
    const Eigen::VectorXd pi =
        (1.0 + (-(zl * oracle::logistic_newton(zl, s.a().cast<double>())).array()).exp()).inverse().matrix();
    std::vector<Eigen::Index> ctl, trt;
    for (Eigen::Index i = 0; i < s.n(); ++i) (s.a()[i] ? trt : ctl).push_back(i);
    Eigen::MatrixXd zc(ctl.size(), zq.cols());
    Eigen::VectorXd yc(ctl.size());
    for (std::size_t i = 0; i < ctl.size(); ++i) {
      zc.row(i) = zq.row(ctl[i]);
      yc[i] = s.y()[ctl[i]];
    }
    const Eigen::VectorXd mu0 = zq * oracle::ols(zc, yc);
    // Treated outcome mu0(x) * (t0 + t1 x): least squares in (mu0, mu0 x).
    Eigen::MatrixXd zt(trt.size(), 2);
    Eigen::VectorXd yt(trt.size());
    for (std::size_t i = 0; i < trt.size(); ++i) {
      zt(i, 0) = mu0[trt[i]];
      zt(i, 1) = mu0[trt[i]] * s.x()(trt[i], 0);
      yt[i] = s.y()[trt[i]];
    }
    const Eigen::VectorXd t = oracle::ols(zt, yt);
    const Eigen::VectorXd mu1 = (mu0.array() * (t[0] + t[1] * s.x().col(0).array())).matrix();
    CHECK(r.psi_hat == doctest::Approx(aipw_ratio(s, pi, mu0, mu1)).epsilon(1e-8));
  }
}

TEST_CASE("influence values average to zero at the estimate") {
  const MultiSiteData d = generate(DgpParams{}, 3);
  const NuisanceBundle b = fit_bundle(d, {0, 1, 2}, risk_ratio());
  for (Method m : {Method::MR1, Method::MR2}) {
    const EstimateReport r = estimate_measure(d, b, m, risk_ratio());
    const InfluenceSample phi = influence_at(d, b, m, risk_ratio(), r.psi0_hat, r.psi1_hat);
    CHECK(std::abs(phi.mean()) < 1e-10);
    const double v = phi.values.squaredNorm() / double(phi.size());
    CHECK(r.se == doctest::Approx(std::sqrt(v / double(phi.size()))).epsilon(1e-12));
  }
}

TEST_CASE("site sums reproduce the pooled estimate") {
  const MultiSiteData d = generate(DgpParams{}, 5);
  const NuisanceBundle b = fit_bundle(d, {0, 1, 2}, risk_ratio());
  const EstimateReport ref = estimate_measure(d, b, Method::MR1, risk_ratio());
  std::vector<SiteSums> sums;
  std::vector<SiteContribution> cs;
  for (int k : {2, 0, 1}) {
    cs.push_back(site_contribution(d.site(k), b, Method::MR1));
    sums.push_back(site_sums(cs.back()));
  }
  const PointEstimate p = aggregate_point(sums, risk_ratio());
  CHECK(p.psi == ref.psi_hat);
  CHECK(p.n == d.n_total());
  CHECK(p.p0 == doctest::Approx(double(d.target().n()) / double(d.n_total())));
  std::vector<SiteSums> no_target{sums[0]};
  CHECK(code_of([&] { aggregate_point(no_target, risk_ratio()); }) == ErrorCode::NoTargetRows);
}

TEST_CASE("risk difference with sources is refused for MR1") {
  const MultiSiteData d = generate(DgpParams{}, 5);
  CHECK(code_of([&] { estimate_measure(d, {0, 1}, Method::MR1, risk_difference()); }) ==
        ErrorCode::UnsupportedMeasureForMode);
  CHECK_NOTHROW(estimate_measure(d, {0}, Method::MR1, risk_difference()));
  CHECK_NOTHROW(estimate_measure(d, {0, 1, 2}, Method::MR2, risk_difference()));
}

TEST_CASE("rows with control means at the floor fall back to target-only weights") {
  const MultiSiteData d = generate(DgpParams{}, 6);
  NuisanceBundle b = fit_bundle(d, {0, 1}, risk_ratio());
  b.mu0.at(1).coef.setZero();
  const EstimateReport r = estimate_measure(d, b, Method::MR1, risk_ratio());
  const SiteDataset& s = d.target();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    const PointNuisance v = evaluate_nuisance(s.x().row(i).transpose(), b);
    const double mu1 = v.tau * v.mu0[0];
    sum += mu1 + s.a()[i] * (s.y()[i] - mu1) / v.pi[0];
  }
  CHECK(r.fallback_rows == d.target().n() + d.site(1).n());
  CHECK(r.psi1_hat == doctest::Approx(sum / double(s.n())).epsilon(1e-12));
  CHECK(std::isfinite(r.se));
}
