#include <doctest.h>

#include <filesystem>

#include "fedcausal/bootstrap.hpp"
#include "fedcausal/sim.hpp"

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

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const MultiSiteData a = generate(DgpParams{}, 9);
  const MultiSiteData b = generate(DgpParams{}, 9);
  const MultiSiteData c = generate(DgpParams{}, 10);
  for (int k : a.site_ids()) {
    CHECK(a.site(k).y() == b.site(k).y());
    CHECK(a.site(k).x() == b.site(k).x());
  }
  CHECK(a.target().y() != c.target().y());
  CHECK(a.n_total() == 1000);
}

TEST_CASE("generated marginals match the analytic moments") {
  DgpParams p;
  p.n_total = 100000;
  const MultiSiteData d = generate(p, 2);
  const double n = double(p.n_total);
  const double share = double(d.target().n()) / n;
  CHECK(std::abs(share - 0.1) < 3.0 * std::sqrt(0.09 / n));
  for (int k : d.site_ids()) {
    const auto& x = d.site(k).x().col(0);
    const double nk = double(x.size());
    const double mean = x.mean();
    const double var = (x.array() - mean).square().sum() / (nk - 1.0);
    const NormalLaw law = p.covariate[static_cast<std::size_t>(k)];
    CHECK(std::abs(mean - law.mean) < 3.0 * std::sqrt(law.var / nk));
    CHECK(std::abs(var - law.var) < 3.0 * law.var * std::sqrt(2.0 / nk));
  }
}

TEST_CASE("treated outcomes follow the shifted effect function") {
  DgpParams p = scenario("2.2").dgp;
  p.n_total = 100000;
  const MultiSiteData d = generate(p, 4);
  for (int k : d.site_ids()) {
    const SiteDataset& s = d.site(k);
    double sum = 0.0;
    double cnt = 0.0;
    for (Eigen::Index i = 0; i < s.n(); ++i) {
      if (!s.a()[i]) continue;
      const double x = s.x()(i, 0);
      const auto kk = static_cast<std::size_t>(k);
      sum += s.y()[i] - (x + p.b_mu[kk]) * (x + p.b_tau[kk]);
      cnt += 1.0;
    }
    CHECK(std::abs(sum / cnt) < 3.0 / std::sqrt(cnt));
  }
  CHECK(p.b_tau[2] == 5.0);
}

TEST_CASE("true estimand") {
  const TrueValues t = true_psi(DgpParams{});
  CHECK(t.psi == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(t.psi0 == doctest::Approx(2.0));
  CHECK(t.psi1 == doctest::Approx(5.0));
  const TrueValues q = true_psi_numeric(DgpParams{});
  CHECK(std::abs(q.psi - t.psi) < 1e-8);
  CHECK(std::abs(true_psi(DgpParams{}, MeasureKind::RiskDifference).psi - 3.0) < 1e-12);

  DgpParams point;
  point.covariate[0] = {1.0, 0.0};
  CHECK(true_psi(point).psi == doctest::Approx(1.0).epsilon(1e-15));

  DgpParams shifted;
  shifted.b_mu[0] = 1.0;
  shifted.b_tau[0] = 0.5;
  // E[(X+1)(X+0.5)] / E[X+1] with X ~ N(2,1): (4 + 1 + 1.5*2 + 0.5) / 3.
  CHECK(true_psi(shifted).psi == doctest::Approx(8.5 / 3.0).epsilon(1e-10));
}

TEST_CASE("Gauss-Hermite weights integrate normal moments") {
  std::vector<double> nodes, weights;
  gauss_hermite(20, nodes, weights);
  double m0 = 0.0, m2 = 0.0, m4 = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    m0 += weights[i];
    m2 += weights[i] * nodes[i] * nodes[i];
    m4 += weights[i] * std::pow(nodes[i], 4);
  }
  CHECK(m0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("scenarios") {
  CHECK(scenario_ids().size() == 5);
  CHECK(code_of([] { scenario("3.1"); }) == ErrorCode::ConfigError);
  try {
    scenario("9.9");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("1.1") != std::string::npos);
  }
  CHECK(scenario("1.1").dgp.b_mu == std::vector<double>{0, 0, 0});
  CHECK(scenario("2.2").dgp.b_tau[1] == 0.0);

  const auto path = std::filesystem::temp_directory_path() / "fedcausal_scenario.json";
  for (const auto& id : scenario_ids()) {
    const ScenarioSpec s = scenario(id);
    save_scenario(s, path);
    const ScenarioSpec back = load_scenario(path);
    CHECK(back.id == s.id);
    CHECK(back.estimators == s.estimators);
    CHECK(back.misspec == s.misspec);
    CHECK(back.dgp.b_mu == s.dgp.b_mu);
    CHECK(back.dgp.b_tau == s.dgp.b_tau);
    CHECK(back.dgp.site_probs == s.dgp.site_probs);
    CHECK(back.dgp.n_total == s.dgp.n_total);
  }
  DgpParams bad;
  bad.site_probs = {0.5, 0.4, 0.2};
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("oracle nuisances need the default bases") {
  NuisanceConfig cfg;
  cfg.tau_features.basis = Basis::Quadratic;
  CHECK(code_of([&] { oracle_bundle(DgpParams{}, {0, 1}, risk_ratio(), cfg); }) ==
        ErrorCode::UnsupportedDgpForm);
  const NuisanceBundle b = oracle_bundle(DgpParams{}, {0, 1, 2}, risk_ratio());
  Eigen::VectorXd x(1);
  x << 1.5;
  CHECK(b.tau.predict(x) == doctest::Approx(1.5));
  CHECK(b.mu0_of(2).predict(x) == doctest::Approx(1.5));
}

TEST_CASE("bootstrap resamples each site to its own size") {
  const MultiSiteData d = generate(DgpParams{}, 5);
  BootstrapPlan plan;
  plan.B = 4;
  plan.seed = 8;
  const MultiSiteData r = bootstrap_replicate(d, plan, 2);
  for (int k : d.site_ids()) {
    CHECK(r.site(k).n() == d.site(k).n());
    CHECK(resample_site(d.site(k), plan, 2).y() == r.site(k).y());
  }
  CHECK(bootstrap_replicate(d, plan, 1).target().y() != r.target().y());
  CHECK(code_of([&] { bootstrap_replicate(d, plan, 4); }) == ErrorCode::PreconditionViolation);
  // A site's resample does not depend on the other sites.
  const MultiSiteData two = d.subset(std::vector<int>{0, 2});
  CHECK(bootstrap_replicate(two, plan, 2).site(2).y() == r.site(2).y());
}
