#include <doctest.h>

#include <random>

#include "fedcausal/nuisance.hpp"
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

MultiSiteData large_sample(unsigned seed = 21) {
  DgpParams p;
  p.n_total = 40000;
  return generate(p, seed);
}

}  // namespace

TEST_CASE("propensity recovers the generating coefficients") {
  const MultiSiteData d = large_sample();
  const DgpParams p;
  for (int k : d.site_ids()) {
    const GlmModel m = fit_propensity(d, k);
    CHECK(m.coef[0] == doctest::Approx(p.propensity_intercept).epsilon(0.1));
    CHECK(m.coef[1] == doctest::Approx(p.propensity_slope[static_cast<std::size_t>(k)]).epsilon(0.1));
  }
}

TEST_CASE("propensity matches an independent Newton fit") {
  const MultiSiteData d = generate(DgpParams{}, 4);
  const SiteDataset& s = d.site(1);
  const Eigen::VectorXd ref =
      oracle::logistic_newton(oracle::with_intercept(s.x(), false), s.a().cast<double>());
  NuisanceConfig cfg;
  cfg.propensity_clip = 0.0;
  CHECK((fit_propensity(d, 1, cfg).coef - ref).norm() < 1e-8);
}

TEST_CASE("density ratio approaches the generating ratio") {
  const MultiSiteData d = large_sample();
  const DgpParams p;
  const NuisanceBundle truth = oracle_bundle(p, {0, 1, 2}, risk_ratio());
  for (int k : {1, 2}) {
    const DensityRatioModel q = fit_density_ratio(d, k);
    for (double x : {1.0, 2.0, 3.0}) {
      Eigen::VectorXd v(1);
      v << x;
      CHECK(q.predict(v) == doctest::Approx(truth.density_ratio.at(k).predict(v)).epsilon(0.15));
    }
    CHECK(q.prior_correction == doctest::Approx(std::log(static_cast<double>(d.site(0).n()) / d.site(k).n())));
  }
}

TEST_CASE("density ratio requires a source site") {
  const MultiSiteData d = generate(DgpParams{}, 4);
  CHECK(code_of([&] { fit_density_ratio(d, 0); }) == ErrorCode::PreconditionViolation);
}

TEST_CASE("treated product regression is exact on noiseless outcomes") {
  // mu0(x) = 1 + x + x^2 (quadratic), tau(x) = 2 - 0.5 x (linear).
  const Eigen::Index n = 60;
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXi a(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xi = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
    x(i, 0) = xi;
    a[i] = static_cast<int>(i % 2);
    const double mu0 = 1.0 + xi + xi * xi;
    y[i] = a[i] ? mu0 * (2.0 - 0.5 * xi) : mu0;
  }
  const MultiSiteData d({SiteDataset(0, y, x, a)});
  const TauModel tau = fit_tau(d, {0}, risk_ratio());
  CHECK(tau.model.coef[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(tau.model.coef[1] == doctest::Approx(-0.5).epsilon(1e-9));

  Eigen::VectorXd y_rd = y;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (a[i]) y_rd[i] = 1.0 + x(i, 0) + x(i, 0) * x(i, 0) + 3.0 + x(i, 0);
  }
  const MultiSiteData d_rd({SiteDataset(0, y_rd, x, a)});
  const TauModel tau_rd = fit_tau(d_rd, {0}, risk_difference());
  CHECK(tau_rd.model.coef[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(tau_rd.model.coef[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("assembled bundle equals the pooled fit") {
  const MultiSiteData d = generate(DgpParams{}, 8);
  const NuisanceBundle b = fit_bundle(d, {0, 1, 2}, risk_ratio());
  std::map<int, LocalModels> locals;
  std::map<int, DensityRatioModel> ratios;
  std::map<int, GlmModel> mu0;
  for (int k : {0, 1, 2}) {
    locals.emplace(k, fit_local_models(d.site(k)));
    mu0.emplace(k, locals.at(k).mu0);
    if (k) ratios.emplace(k, fit_density_ratio(d, k));
  }
  const NuisanceBundle a = assemble_bundle({0, 1, 2}, MeasureKind::RiskRatio, locals, ratios,
                                           fit_tau(d, {0, 1, 2}, risk_ratio(), {}, &mu0));
  for (int k : {0, 1, 2}) {
    CHECK(a.pi(k).coef == b.pi(k).coef);
    CHECK(a.mu0_of(k).coef == b.mu0_of(k).coef);
    if (k) CHECK(a.density_ratio.at(k).logit.coef == b.density_ratio.at(k).logit.coef);
  }
  CHECK(a.tau.model.coef == b.tau.model.coef);
}

TEST_CASE("oracle variance mode fixes every conditional variance") {
  const MultiSiteData d = generate(DgpParams{}, 8);
  NuisanceConfig cfg;
  cfg.oracle_variance = 1.0;
  const NuisanceBundle b = fit_bundle(d, {0, 1}, risk_ratio(), cfg);
  Eigen::VectorXd x(1);
  x << 0.7;
  for (int arm : {0, 1}) {
    for (int k : {0, 1}) CHECK(b.sigma2(arm, k, x) == 1.0);
  }
}

TEST_CASE("misspecification refits only the targeted models") {
  const MultiSiteData d = generate(DgpParams{}, 8);
  const NuisanceBundle b = fit_bundle(d, {0, 1, 2}, risk_ratio());
  const MisspecSpec ii = misspec_preset("ii");
  const NuisanceBundle m = apply_misspec(b, d, ii);
  CHECK(m.pi(0).features.transform == FeatureTransform::DropLast);
  CHECK(m.density_ratio.at(2).logit.features.transform == FeatureTransform::DropLast);
  CHECK(m.mu0_of(0).coef == b.mu0_of(0).coef);
  CHECK(m.tau.model.coef == b.tau.model.coef);

  const NuisanceBundle iv = apply_misspec(b, d, misspec_preset("iv"));
  CHECK(iv.tau.model.features.transform == FeatureTransform::Exponentiate);
  CHECK(iv.pi(1).coef == b.pi(1).coef);

  const MisspecSpec only_target = misspec_preset("iii").restricted_to({0});
  for (const auto& t : only_target.targets) {
    CHECK((t.kind == NuisanceKind::Tau || t.site == 0));
  }
  const NuisanceBundle target = fit_bundle(d, {0}, risk_ratio());
  CHECK(code_of([&] { apply_misspec(target, d, misspec_preset("iii")); }) == ErrorCode::UnknownTarget);
  CHECK(code_of([] { misspec_preset("v"); }) == ErrorCode::ConfigError);
}

TEST_CASE("empty treatment arm is reported with its site") {
  Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(8, 0, 1);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(8, 1);
  Eigen::VectorXi a = Eigen::VectorXi::Zero(8);
  try {
    fit_local_models(SiteDataset(3, y, x, a));
    FAIL("expected EmptyTreatmentArm");
  } catch (const EmptyTreatmentArmError& e) {
    CHECK(e.site() == 3);
    CHECK(e.arm() == 1);
  }
}
