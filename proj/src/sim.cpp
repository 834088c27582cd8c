#include "fedcausal/sim.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fedcausal/rng.hpp"

namespace fedcausal {

namespace {

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorCode::ConfigError, what);
}

}  // namespace

void DgpParams::validate() const {
  const std::size_t k = site_probs.size();
  if (k == 0) config_error("at least one site is required");
  if (covariate.size() != k || propensity_slope.size() != k || b_mu.size() != k ||
      b_tau.size() != k) {
    config_error("per-site parameter lists must all have " + std::to_string(k) + " entries");
  }
  double total = 0.0;
  for (double p : site_probs) {
    if (!(p > 0.0)) config_error("site probabilities must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) config_error("site probabilities must sum to 1");
  for (const auto& law : covariate) {
    if (!(law.var >= 0.0) || !std::isfinite(law.mean)) config_error("covariate variances must be >= 0");
  }
  if (n_total < 1) config_error("n_total must be positive");
  if (!(noise_sd > 0.0)) config_error("noise_sd must be positive");
}

std::vector<std::string> scenario_ids() { return {"1.1", "1.2", "2.1", "2.2", "2.3"}; }

ScenarioSpec scenario(const std::string& id) {
  ScenarioSpec s;
  s.id = id;
  const std::vector<double> shift{0.0, -10.0, 15.0};
  if (id == "1.1" || id == "1.2") {
    s.estimators = {Method::MR1, Method::MR2, Method::DRt};
    s.misspec = {"i", "ii", "iii", "iv"};
    if (id == "1.2") s.dgp.b_mu = shift;
    return s;
  }
  if (id == "2.1" || id == "2.2" || id == "2.3") {
    s.estimators = {Method::MR1, Method::DRt, Method::FWMR1, Method::FSMR1};
    s.misspec = {"i"};
    s.dgp.b_mu = shift;
    if (id == "2.2") s.dgp.b_tau = {0.0, 0.0, 5.0};
    if (id == "2.3") s.dgp.b_tau = {0.0, 5.0, 5.0};
    return s;
  }
  std::string valid;
  for (const auto& v : scenario_ids()) valid += (valid.empty() ? "" : ", ") + v;
  config_error("unknown scenario '" + id + "'; valid ids: " + valid);
}

namespace {

using nlohmann::json;

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ScenarioSpec load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  json j;
  try {
    in >> j;
    ScenarioSpec s;
    if (j.contains("base")) s = scenario(j.at("base").get<std::string>());
    read_opt(j, "id", s.id);
    if (j.contains("estimators")) {
      s.estimators.clear();
      for (const auto& e : j.at("estimators")) s.estimators.push_back(parse_method(e.get<std::string>()));
    }
    read_opt(j, "misspec", s.misspec);
    if (j.contains("dgp")) {
      const json& d = j.at("dgp");
      read_opt(d, "site_probs", s.dgp.site_probs);
      if (d.contains("covariate")) {
        s.dgp.covariate.clear();
        for (const auto& c : d.at("covariate")) {
          s.dgp.covariate.push_back({c.at("mean").get<double>(), c.at("var").get<double>()});
        }
      }
      read_opt(d, "propensity_intercept", s.dgp.propensity_intercept);
      read_opt(d, "propensity_slope", s.dgp.propensity_slope);
      read_opt(d, "b_mu", s.dgp.b_mu);
      read_opt(d, "b_tau", s.dgp.b_tau);
      read_opt(d, "n_total", s.dgp.n_total);
      read_opt(d, "noise_sd", s.dgp.noise_sd);
      read_opt(d, "fixed_quota", s.dgp.fixed_quota);
    }
    if (s.id.empty()) config_error(path.string() + ": scenario needs an id");
    s.dgp.validate();
    return s;
  } catch (const json::exception& e) {
    config_error(path.string() + ": " + e.what());
  }
}

void save_scenario(const ScenarioSpec& spec, const std::filesystem::path& path) {
  json j;
  j["id"] = spec.id;
  j["estimators"] = json::array();
  for (Method m : spec.estimators) j["estimators"].push_back(to_string(m));
  j["misspec"] = spec.misspec;
  json d;
  d["site_probs"] = spec.dgp.site_probs;
  d["covariate"] = json::array();
  for (const auto& c : spec.dgp.covariate) d["covariate"].push_back({{"mean", c.mean}, {"var", c.var}});
  d["propensity_intercept"] = spec.dgp.propensity_intercept;
  d["propensity_slope"] = spec.dgp.propensity_slope;
  d["b_mu"] = spec.dgp.b_mu;
  d["b_tau"] = spec.dgp.b_tau;
  d["n_total"] = spec.dgp.n_total;
  d["noise_sd"] = spec.dgp.noise_sd;
  d["fixed_quota"] = spec.dgp.fixed_quota;
  j["dgp"] = d;
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

MultiSiteData generate(const DgpParams& params, std::uint64_t seed) {
  params.validate();
  Engine eng(seed);
  const int k = params.num_sites();
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  if (params.fixed_quota) {
    for (int s = 0; s < k; ++s) {
      counts[static_cast<std::size_t>(s)] = static_cast<Eigen::Index>(
          std::llround(params.site_probs[static_cast<std::size_t>(s)] * static_cast<double>(params.n_total)));
    }
  } else {
    std::discrete_distribution<int> site_dist(params.site_probs.begin(), params.site_probs.end());
    for (Eigen::Index i = 0; i < params.n_total; ++i) ++counts[static_cast<std::size_t>(site_dist(eng))];
  }
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<SiteDataset> sites;
  for (int s = 0; s < k; ++s) {
    const auto us = static_cast<std::size_t>(s);
    const Eigen::Index n = counts[us];
    if (n == 0) continue;
    Eigen::VectorXd y(n);
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXi a(n);
    const NormalLaw law = params.covariate[us];
    for (Eigen::Index i = 0; i < n; ++i) {
      const double xi = law.mean + std::sqrt(law.var) * std_normal(eng);
      const double eta = params.propensity_intercept + params.propensity_slope[us] * xi;
      const double pi = 1.0 / (1.0 + std::exp(-eta));
      const int ai = unif(eng) < pi ? 1 : 0;
      const double mu0 = xi + params.b_mu[us];
      const double tau = xi + params.b_tau[us];
      const double y0 = mu0 + params.noise_sd * std_normal(eng);
      const double y1 = mu0 * tau + params.noise_sd * std_normal(eng);
      x(i, 0) = xi;
      a[i] = ai;
      y[i] = ai == 1 ? y1 : y0;
    }
    sites.emplace_back(s, std::move(y), std::move(x), std::move(a));
  }
  return MultiSiteData(std::move(sites));
}

void gauss_hermite(int order, std::vector<double>& nodes, std::vector<double>& weights) {
  if (order < 1) throw Error(ErrorCode::PreconditionViolation, "quadrature order must be >= 1");
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    jac(i, i - 1) = std::sqrt(static_cast<double>(i));
    jac(i - 1, i) = jac(i, i - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jac);
  nodes.resize(static_cast<std::size_t>(order));
  weights.resize(static_cast<std::size_t>(order));
  for (int i = 0; i < order; ++i) {
    nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()[i];
    const double v = eig.eigenvectors()(0, i);
    weights[static_cast<std::size_t>(i)] = v * v;
  }
}

TrueValues true_psi_numeric(const DgpParams& params, MeasureKind measure) {
  params.validate();
  std::vector<double> nodes;
  std::vector<double> weights;
  gauss_hermite(40, nodes, weights);
  const NormalLaw law = params.covariate[0];
  double m0 = 0.0;
  double m1 = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double x = law.mean + std::sqrt(law.var) * nodes[i];
    const double mu0 = x + params.b_mu[0];
    m0 += weights[i] * mu0;
    m1 += weights[i] * mu0 * (x + params.b_tau[0]);
  }
  const CausalMeasure m(measure);
  return {m0, m1, m.apply(m0, m1)};
}

TrueValues true_psi(const DgpParams& params, MeasureKind measure) {
  params.validate();
  if (params.b_mu[0] != 0.0 || params.b_tau[0] != 0.0) return true_psi_numeric(params, measure);
  const NormalLaw law = params.covariate[0];
  const double psi0 = law.mean;
  const double psi1 = law.mean * law.mean + law.var;
  return {psi0, psi1, CausalMeasure(measure).apply(psi0, psi1)};
}

NuisanceBundle oracle_bundle(const DgpParams& params, const std::vector<int>& sites,
                             const CausalMeasure& measure, const NuisanceConfig& config) {
  params.validate();
  const NuisanceConfig defaults;
  if (!(config.propensity_features == defaults.propensity_features) ||
      !(config.outcome_features == defaults.outcome_features) ||
      !(config.ratio_features == defaults.ratio_features) ||
      !(config.tau_features == defaults.tau_features)) {
    throw Error(ErrorCode::UnsupportedDgpForm, "oracle nuisances need the default feature bases");
  }
  NuisanceBundle b;
  b.sites = sites;
  std::sort(b.sites.begin(), b.sites.end());
  b.measure = measure.kind();
  auto linear_model = [](Family f, FeatureMap fm, Eigen::VectorXd coef) {
    GlmModel m;
    m.family = f;
    m.features = fm;
    m.coef = std::move(coef);
    return m;
  };
  const NormalLaw t = params.covariate[0];
  for (int k : b.sites) {
    if (k < 0 || k >= params.num_sites()) {
      throw Error(ErrorCode::UnknownTarget, "site " + std::to_string(k) + " is not in the generator");
    }
    const auto uk = static_cast<std::size_t>(k);
    GlmModel pi = linear_model(Family::Logistic, config.propensity_features,
                               Eigen::Vector2d(params.propensity_intercept, params.propensity_slope[uk]));
    pi.clip = ClipBounds{config.propensity_clip, 1.0 - config.propensity_clip};
    b.propensity.emplace(k, pi);
    const double bm = params.b_mu[uk];
    const double bt = params.b_tau[uk];
    b.mu0.emplace(k, linear_model(Family::Linear, config.outcome_features, Eigen::Vector3d(bm, 1.0, 0.0)));
    b.mu1.emplace(k, linear_model(Family::Linear, config.outcome_features,
                                  Eigen::Vector3d(bm * bt, bm + bt, 1.0)));
    for (int a = 0; a <= 1; ++a) {
      VarianceModel v;
      v.mode = VarianceMode::Constant;
      v.value = params.noise_sd * params.noise_sd;
      v.floor = config.variance_floor;
      b.cond_var.emplace(std::make_pair(a, k), v);
    }
    if (k != MultiSiteData::kTargetId) {
      const NormalLaw s = params.covariate[uk];
      if (!(t.var > 0.0) || !(s.var > 0.0)) {
        throw Error(ErrorCode::UnsupportedDgpForm, "density ratio needs positive covariate variances");
      }
      const double prior = std::log(params.site_probs[0] / params.site_probs[uk]);
      const double quad = -0.5 / t.var + 0.5 / s.var;
      const double lin = t.mean / t.var - s.mean / s.var;
      const double c = -0.5 * t.mean * t.mean / t.var + 0.5 * s.mean * s.mean / s.var -
                       0.5 * std::log(t.var / s.var) + prior;
      DensityRatioModel q;
      q.k = k;
      q.logit = linear_model(Family::Logistic, config.ratio_features, Eigen::Vector3d(c, lin, quad));
      q.prior_correction = prior;
      q.clip = config.ratio_clip;
      b.density_ratio.emplace(k, q);
    }
  }
  const double bt0 = params.b_tau[0];
  if (measure.kind() == MeasureKind::RiskRatio) {
    b.tau.model = linear_model(Family::Linear, config.tau_features, Eigen::Vector2d(bt0, 1.0));
  } else {
    // mu1 - mu0 = (x + b_mu)(x + b_tau - 1) is not linear in x.
    throw Error(ErrorCode::UnsupportedDgpForm, "oracle effect function exists for the risk ratio only");
  }
  b.tau.measure = measure.kind();
  b.mu0_pooled = b.mu0.at(MultiSiteData::kTargetId);
  b.mu1_pooled = b.mu1.at(MultiSiteData::kTargetId);
  return b;
}

MisspecSpec misspec_preset(const std::string& type) {
  MisspecSpec s;
  using K = NuisanceKind;
  if (type == "i") return s;
  if (type == "ii") {
    s.targets = {{K::Propensity, 0}, {K::Propensity, 1}, {K::Propensity, 2},
                 {K::DensityRatio, 1}, {K::DensityRatio, 2}};
    s.distortion = FeatureTransform::DropLast;
    return s;
  }
  if (type == "iii") {
    s.targets = {{K::Propensity, 2}, {K::Mu0, 0}, {K::Mu0, 1},
                 {K::DensityRatio, 1}, {K::DensityRatio, 2}};
    s.distortion = FeatureTransform::DropLast;
    return s;
  }
  if (type == "iv") {
    s.targets = {{K::Tau, -1}};
    s.distortion = FeatureTransform::Exponentiate;
    return s;
  }
  config_error("unknown misspecification type '" + type + "'; valid: i, ii, iii, iv");
}

}  // namespace fedcausal
