#include "fedcausal/nuisance.hpp"

#include <algorithm>
#include <cmath>

namespace fedcausal {

const char* to_string(VarianceMode m) {
  return m == VarianceMode::Constant ? "constant" : "regression";
}

const char* to_string(TauStrategy s) {
  return s == TauStrategy::TreatedProductRegression ? "treated_product" : "pseudo_response";
}

double DensityRatioModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return clip.apply(std::exp(logit.linear_predictor(x)));
}

double DensityRatioModel::covariate_density_ratio(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return predict(x) * std::exp(-prior_correction);
}

double VarianceModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  double v = value;
  if (mode == VarianceMode::Regression && regression) v = regression->predict(x);
  return std::max(v, floor);
}

const GlmModel& NuisanceBundle::pi(int k) const {
  auto it = propensity.find(k);
  if (it == propensity.end()) {
    throw Error(ErrorCode::UnknownTarget, "no propensity model for site " + std::to_string(k));
  }
  return it->second;
}

const GlmModel& NuisanceBundle::mu0_of(int k) const {
  auto it = mu0.find(k);
  if (it == mu0.end()) {
    throw Error(ErrorCode::UnknownTarget, "no control outcome model for site " + std::to_string(k));
  }
  return it->second;
}

double NuisanceBundle::q(int k, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (k == 0) return 1.0;
  auto it = density_ratio.find(k);
  if (it == density_ratio.end()) {
    throw Error(ErrorCode::UnknownTarget, "no density ratio for site " + std::to_string(k));
  }
  return it->second.predict(x);
}

double NuisanceBundle::sigma2(int a, int k, const Eigen::Ref<const Eigen::VectorXd>& x) const {
  auto it = cond_var.find({a, k});
  if (it == cond_var.end()) {
    throw Error(ErrorCode::UnknownTarget, "no variance model for (a=" + std::to_string(a) +
                                              ", site " + std::to_string(k) + ")");
  }
  return it->second.predict(x);
}

namespace {

void require_arms(const SiteDataset& site) {
  if (site.count_arm(0) == 0) throw EmptyTreatmentArmError(site.site_id(), 0);
  if (site.count_arm(1) == 0) throw EmptyTreatmentArmError(site.site_id(), 1);
}

std::vector<Eigen::Index> arm_rows(const SiteDataset& site, int arm) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < site.n(); ++i) {
    if (site.a()[i] == arm) rows.push_back(i);
  }
  return rows;
}

struct ArmData {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

ArmData arm_data(const SiteDataset& site, int arm) {
  const auto rows = arm_rows(site, arm);
  if (rows.empty()) throw EmptyTreatmentArmError(site.site_id(), arm);
  ArmData out{Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), site.p()),
              Eigen::VectorXd(static_cast<Eigen::Index>(rows.size()))};
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(rows.size()); ++i) {
    out.x.row(i) = site.x().row(rows[static_cast<std::size_t>(i)]);
    out.y[i] = site.y()[rows[static_cast<std::size_t>(i)]];
  }
  return out;
}

ArmData pooled_arm_data(const MultiSiteData& data, int arm, const std::vector<int>& sites) {
  std::vector<ArmData> parts;
  Eigen::Index total = 0;
  for (int k : sites) {
    parts.push_back(arm_data(data.site(k), arm));
    total += parts.back().y.size();
  }
  ArmData out{Eigen::MatrixXd(total, data.p()), Eigen::VectorXd(total)};
  Eigen::Index at = 0;
  for (const auto& part : parts) {
    out.x.middleRows(at, part.y.size()) = part.x;
    out.y.segment(at, part.y.size()) = part.y;
    at += part.y.size();
  }
  return out;
}

GlmModel clipped_propensity(GlmModel m, double eta) {
  m.clip = ClipBounds{eta, 1.0 - eta};
  return m;
}

GlmModel fit_propensity_with(const SiteDataset& site, const FeatureMap& features,
                             const NuisanceConfig& config) {
  require_arms(site);
  const Eigen::VectorXd labels = site.a().cast<double>();
  return clipped_propensity(
      fit_glm(Family::Logistic, features, site.x(), labels, config.logistic),
      config.propensity_clip);
}

DensityRatioModel fit_density_ratio_with(const MultiSiteData& data, int k,
                                         const FeatureMap& features,
                                         const NuisanceConfig& config) {
  if (k == MultiSiteData::kTargetId) {
    throw Error(ErrorCode::PreconditionViolation, "density ratio needs a source site k != 0");
  }
  const SiteDataset& target = data.target();
  const SiteDataset& source = data.site(k);
  const Eigen::Index dim = features.dim(data.p());
  const LogisticFit fit = fit_logistic_stats(
      [&](const Eigen::VectorXd& beta) {
        LogisticStats s = membership_stats(target, true, features, beta);
        s += membership_stats(source, false, features, beta);
        return s;
      },
      dim, config.logistic);
  GlmModel logit;
  logit.family = Family::Logistic;
  logit.coef = fit.coef;
  logit.features = features;
  logit.converged_via_ridge = fit.converged_via_ridge;
  logit.iterations = fit.iterations;
  return make_density_ratio(k, std::move(logit), target.n(), source.n(), config);
}

VarianceModel variance_from_residuals(const Eigen::MatrixXd& x, const Eigen::VectorXd& resid,
                                      VarianceMode mode, const NuisanceConfig& config) {
  VarianceModel v;
  v.mode = mode;
  v.floor = config.variance_floor;
  if (config.oracle_variance) {
    v.mode = VarianceMode::Constant;
    v.value = std::max(*config.oracle_variance, config.variance_floor);
    return v;
  }
  const Eigen::VectorXd sq = resid.array().square().matrix();
  v.value = std::max(sq.mean(), config.variance_floor);
  if (mode == VarianceMode::Regression) {
    v.regression = fit_glm(Family::Linear, FeatureMap{}, x, sq);
  }
  return v;
}

TauModel fit_tau_product(const MultiSiteData& data, const std::vector<int>& sites,
                         const CausalMeasure& measure, const FeatureMap& features,
                         const std::map<int, GlmModel>& mu0) {
  LinearStats total;
  bool first = true;
  for (int k : sites) {
    const LinearStats s = tau_stats(data.site(k), mu0.at(k), measure, features);
    if (first) {
      total = s;
      first = false;
    } else {
      total += s;
    }
  }
  return tau_from_stats(total, measure, features);
}

TauModel fit_tau_pseudo(const MultiSiteData& data, const std::vector<int>& sites,
                        const CausalMeasure& measure, const FeatureMap& features,
                        const NuisanceConfig& config, const std::map<int, GlmModel>* mu0) {
  Eigen::Index total = 0;
  for (int k : sites) total += data.site(k).n();
  Eigen::MatrixXd x(total, data.p());
  Eigen::VectorXd pseudo(total);
  Eigen::Index at = 0;
  for (int k : sites) {
    const SiteDataset& site = data.site(k);
    OutcomeModels om = fit_outcome_models(data, k, false, {}, config);
    const GlmModel& m0 = mu0 ? mu0->at(k) : om.mu0;
    for (Eigen::Index i = 0; i < site.n(); ++i) {
      const Eigen::VectorXd xi = site.x().row(i).transpose();
      const double base = m0.predict(xi);
      if (!measure.in_domain(base)) {
        throw Error(ErrorCode::DomainViolation,
                    "control outcome prediction hits the ratio floor in site " + std::to_string(k));
      }
      pseudo[at] = measure.g(base, om.mu1.predict(xi));
      x.row(at) = site.x().row(i);
      ++at;
    }
  }
  TauModel t;
  t.measure = measure.kind();
  t.model = fit_glm(Family::Linear, features, x, pseudo);
  return t;
}

std::vector<int> normalized_sites(const std::vector<int>& sites) {
  std::vector<int> out = sites;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty() || out.front() != MultiSiteData::kTargetId) {
    throw Error(ErrorCode::MissingTargetSite, "participating sites must include site 0");
  }
  return out;
}

}  // namespace

GlmModel fit_propensity(const MultiSiteData& data, int k, const NuisanceConfig& config) {
  return fit_propensity_with(data.site(k), config.propensity_features, config);
}

LogisticStats membership_stats(const SiteDataset& site, bool is_target, const FeatureMap& features,
                               const Eigen::VectorXd& beta) {
  const Eigen::VectorXd labels = Eigen::VectorXd::Constant(site.n(), is_target ? 1.0 : 0.0);
  return logistic_stats(features.design(site.x()), labels, beta);
}

DensityRatioModel make_density_ratio(int k, GlmModel logit, Eigen::Index n0, Eigen::Index nk,
                                     const NuisanceConfig& config) {
  DensityRatioModel m;
  m.k = k;
  m.logit = std::move(logit);
  m.prior_correction = std::log(static_cast<double>(n0) / static_cast<double>(nk));
  m.clip = config.ratio_clip;
  return m;
}

DensityRatioModel fit_density_ratio(const MultiSiteData& data, int k, const NuisanceConfig& config) {
  return fit_density_ratio_with(data, k, config.ratio_features, config);
}

OutcomeModels fit_outcome_models(const MultiSiteData& data, int k, bool pooled_treated,
                                 const std::vector<int>& pool_sites, const NuisanceConfig& config) {
  const SiteDataset& site = data.site(k);
  require_arms(site);
  const ArmData c = arm_data(site, 0);
  OutcomeModels out;
  out.mu0 = fit_glm(Family::Linear, config.outcome_features, c.x, c.y);
  if (pooled_treated) {
    out.mu1 = fit_pooled_outcome(data, 1, pool_sites.empty() ? data.site_ids() : pool_sites, config);
  } else {
    const ArmData t = arm_data(site, 1);
    out.mu1 = fit_glm(Family::Linear, config.outcome_features, t.x, t.y);
  }
  return out;
}

GlmModel fit_pooled_outcome(const MultiSiteData& data, int a, const std::vector<int>& sites,
                            const NuisanceConfig& config) {
  const ArmData d = pooled_arm_data(data, a, sites);
  return fit_glm(Family::Linear, config.outcome_features, d.x, d.y);
}

LinearStats tau_stats(const SiteDataset& site, const GlmModel& mu0, const CausalMeasure& measure,
                      const FeatureMap& tau_features) {
  const ArmData t = arm_data(site, 1);
  const Eigen::Index d = tau_features.dim(site.p());
  Eigen::MatrixXd z(t.y.size(), d);
  Eigen::VectorXd r(t.y.size());
  for (Eigen::Index i = 0; i < t.y.size(); ++i) {
    const Eigen::VectorXd xi = t.x.row(i).transpose();
    const double base = mu0.predict(xi);
    const Eigen::VectorXd f = tau_features.row(xi);
    if (measure.kind() == MeasureKind::RiskRatio) {
      z.row(i) = (base * f).transpose();
      r[i] = t.y[i];
    } else {
      z.row(i) = f.transpose();
      r[i] = t.y[i] - base;
    }
  }
  return linear_stats(z, r);
}

TauModel tau_from_stats(const LinearStats& stats, const CausalMeasure& measure,
                        const FeatureMap& tau_features) {
  TauModel t;
  t.measure = measure.kind();
  t.model.family = Family::Linear;
  t.model.features = tau_features;
  t.model.coef = solve_normal_equations(stats);
  return t;
}

TauModel fit_tau(const MultiSiteData& data, const std::vector<int>& sites,
                 const CausalMeasure& measure, const NuisanceConfig& config,
                 const std::map<int, GlmModel>* mu0) {
  const std::vector<int> ids = normalized_sites(sites);
  for (int k : ids) require_arms(data.site(k));
  if (config.tau_strategy == TauStrategy::PseudoResponse) {
    return fit_tau_pseudo(data, ids, measure, config.tau_features, config, mu0);
  }
  if (mu0) return fit_tau_product(data, ids, measure, config.tau_features, *mu0);
  std::map<int, GlmModel> fitted;
  for (int k : ids) fitted.emplace(k, fit_outcome_models(data, k, false, {}, config).mu0);
  return fit_tau_product(data, ids, measure, config.tau_features, fitted);
}

VarianceModel fit_cond_variance(const MultiSiteData& data, int a, int k, VarianceMode mode,
                                const NuisanceConfig& config) {
  const SiteDataset& site = data.site(k);
  const ArmData d = arm_data(site, a);
  const GlmModel m = fit_glm(Family::Linear, config.outcome_features, d.x, d.y);
  return variance_from_residuals(d.x, d.y - m.predict_all(d.x), mode, config);
}

LocalModels fit_local_models(const SiteDataset& site, const NuisanceConfig& config) {
  LocalModels m;
  m.site = site.site_id();
  m.propensity = fit_propensity_with(site, config.propensity_features, config);
  const ArmData c = arm_data(site, 0);
  const ArmData t = arm_data(site, 1);
  m.mu0 = fit_glm(Family::Linear, config.outcome_features, c.x, c.y);
  m.mu1 = fit_glm(Family::Linear, config.outcome_features, t.x, t.y);
  m.var0 = variance_from_residuals(c.x, c.y - m.mu0.predict_all(c.x), config.variance_mode, config);
  m.var1 = variance_from_residuals(t.x, t.y - m.mu1.predict_all(t.x), config.variance_mode, config);
  return m;
}

NuisanceBundle assemble_bundle(std::vector<int> sites, MeasureKind measure,
                               const std::map<int, LocalModels>& locals,
                               const std::map<int, DensityRatioModel>& ratios, TauModel tau) {
  NuisanceBundle b;
  b.sites = normalized_sites(sites);
  b.measure = measure;
  for (int k : b.sites) {
    const auto it = locals.find(k);
    if (it == locals.end()) {
      throw Error(ErrorCode::UnknownTarget, "no local models for site " + std::to_string(k));
    }
    const LocalModels& m = it->second;
    b.propensity.emplace(k, m.propensity);
    b.mu0.emplace(k, m.mu0);
    b.mu1.emplace(k, m.mu1);
    b.cond_var.emplace(std::make_pair(0, k), m.var0);
    b.cond_var.emplace(std::make_pair(1, k), m.var1);
    if (k != MultiSiteData::kTargetId) {
      const auto r = ratios.find(k);
      if (r == ratios.end()) {
        throw Error(ErrorCode::UnknownTarget, "no density ratio for site " + std::to_string(k));
      }
      b.density_ratio.emplace(k, r->second);
    }
  }
  b.tau = std::move(tau);
  return b;
}

NuisanceBundle fit_bundle(const MultiSiteData& data, const std::vector<int>& sites,
                          const CausalMeasure& measure, const NuisanceConfig& config) {
  const std::vector<int> ids = normalized_sites(sites);
  std::map<int, LocalModels> locals;
  std::map<int, DensityRatioModel> ratios;
  for (int k : ids) {
    locals.emplace(k, fit_local_models(data.site(k), config));
    if (k != MultiSiteData::kTargetId) ratios.emplace(k, fit_density_ratio(data, k, config));
  }
  std::map<int, GlmModel> mu0;
  for (const auto& [k, m] : locals) mu0.emplace(k, m.mu0);
  NuisanceBundle b =
      assemble_bundle(ids, measure.kind(), locals, ratios, fit_tau(data, ids, measure, config, &mu0));
  b.mu0_pooled = fit_pooled_outcome(data, 0, b.sites, config);
  b.mu1_pooled = fit_pooled_outcome(data, 1, b.sites, config);
  return b;
}

MisspecSpec MisspecSpec::restricted_to(const std::vector<int>& sites) const {
  MisspecSpec out;
  out.distortion = distortion;
  for (const auto& t : targets) {
    if (t.kind == NuisanceKind::Tau) {
      out.targets.push_back(t);
      continue;
    }
    const bool present = std::find(sites.begin(), sites.end(), t.site) != sites.end();
    if (!present) continue;
    if (t.kind == NuisanceKind::DensityRatio && t.site == MultiSiteData::kTargetId) continue;
    out.targets.push_back(t);
  }
  return out;
}

NuisanceBundle apply_misspec(const NuisanceBundle& bundle, const MultiSiteData& data,
                             const MisspecSpec& spec, const NuisanceConfig& config) {
  NuisanceBundle out = bundle;
  const CausalMeasure measure(bundle.measure);
  for (const auto& t : spec.targets) {
    switch (t.kind) {
      case NuisanceKind::Propensity: {
        if (!bundle.propensity.count(t.site)) {
          throw Error(ErrorCode::UnknownTarget, "propensity of site " + std::to_string(t.site));
        }
        FeatureMap f = config.propensity_features;
        f.transform = spec.distortion;
        out.propensity[t.site] = fit_propensity_with(data.site(t.site), f, config);
        break;
      }
      case NuisanceKind::Mu0: {
        if (!bundle.mu0.count(t.site)) {
          throw Error(ErrorCode::UnknownTarget, "mu0 of site " + std::to_string(t.site));
        }
        FeatureMap f = config.outcome_features;
        f.transform = spec.distortion;
        const ArmData c = arm_data(data.site(t.site), 0);
        out.mu0[t.site] = fit_glm(Family::Linear, f, c.x, c.y);
        break;
      }
      case NuisanceKind::DensityRatio: {
        if (!bundle.density_ratio.count(t.site)) {
          throw Error(ErrorCode::UnknownTarget, "density ratio of site " + std::to_string(t.site));
        }
        FeatureMap f = config.ratio_features;
        f.transform = spec.distortion;
        out.density_ratio[t.site] = fit_density_ratio_with(data, t.site, f, config);
        break;
      }
      case NuisanceKind::Tau: {
        if (bundle.sites.empty()) throw Error(ErrorCode::UnknownTarget, "tau of an empty bundle");
        NuisanceConfig c = config;
        c.tau_features.transform = spec.distortion;
        out.tau = fit_tau(data, bundle.sites, measure, c, &bundle.mu0);
        break;
      }
    }
  }
  return out;
}

}  // namespace fedcausal
