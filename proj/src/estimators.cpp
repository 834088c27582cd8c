#include "fedcausal/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fedcausal {

const char* to_string(PsiComponent c) {
  switch (c) {
    case PsiComponent::Psi0: return "psi0";
    case PsiComponent::Psi1: return "psi1";
    case PsiComponent::Measure: return "measure";
  }
  return "?";
}

double InfluenceSample::mean() const {
  if (values.size() == 0) return 0.0;
  return pairwise_sum(std::span<const double>(values.data(), static_cast<std::size_t>(values.size()))) /
         static_cast<double>(values.size());
}

PointNuisance evaluate_nuisance(const Eigen::Ref<const Eigen::VectorXd>& x,
                                const NuisanceBundle& bundle) {
  PointNuisance v;
  v.sites = bundle.sites;
  const auto m = static_cast<Eigen::Index>(bundle.sites.size());
  v.pi.resize(m);
  v.mu0.resize(m);
  v.q.resize(m);
  v.var1.resize(m);
  v.var0.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const int k = bundle.sites[static_cast<std::size_t>(j)];
    v.pi[j] = bundle.pi(k).predict(x);
    v.mu0[j] = bundle.mu0_of(k).predict(x);
    v.q[j] = bundle.q(k, x);
    v.var1[j] = bundle.sigma2(1, k, x);
    v.var0[j] = bundle.sigma2(0, k, x);
  }
  v.tau = bundle.tau.predict(x);
  if (bundle.mu0_pooled && bundle.mu1_pooled) {
    v.mu0_pooled = bundle.mu0_pooled->predict(x);
    v.mu1_pooled = bundle.mu1_pooled->predict(x);
    v.has_pooled = true;
  }
  return v;
}

namespace {

enum class WeightFailure { None, Domain, NonFinite };

struct WeightResult {
  Eigen::VectorXd w;
  WeightFailure failure = WeightFailure::None;
};

Eigen::VectorXd target_only(Eigen::Index m) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  w[0] = 1.0;
  return w;
}

// R0 = 1 / (1 + sum 1/ratio_k), Rk = R0 / ratio_k.
WeightResult normalize_ratios(const Eigen::VectorXd& ratio) {
  const Eigen::Index m = ratio.size() + 1;
  for (Eigen::Index j = 0; j < ratio.size(); ++j) {
    if (!std::isfinite(ratio[j]) || ratio[j] <= 0.0) return {target_only(m), WeightFailure::NonFinite};
  }
  const double r0 = 1.0 / (1.0 + ratio.cwiseInverse().sum());
  Eigen::VectorXd w(m);
  w[0] = r0;
  for (Eigen::Index j = 0; j < ratio.size(); ++j) w[j + 1] = r0 / ratio[j];
  if (!w.allFinite()) return {target_only(m), WeightFailure::NonFinite};
  return {w, WeightFailure::None};
}

WeightResult try_c1(const PointNuisance& v, const CausalMeasure& measure) {
  const auto m = static_cast<Eigen::Index>(v.sites.size());
  if (m == 1) return {target_only(1), WeightFailure::None};
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!measure.in_domain(v.mu0[j])) return {target_only(m), WeightFailure::Domain};
  }
  const double tau2 = v.tau * v.tau;
  const double mu00 = v.mu0[0];
  // g_k up to a factor common to all sites; pr(S=k|x) is proportional to 1/q_k.
  Eigen::VectorXd g(m - 1);
  for (Eigen::Index j = 1; j < m; ++j) {
    g[j - 1] = (v.var1[j] / v.pi[j] + v.var0[j] * tau2 / (1.0 - v.pi[j])) * v.q[j] /
               (v.mu0[j] * v.mu0[j]);
  }
  const double inv_g_sum = g.cwiseInverse().sum();
  const double control_term = v.pi[0] * v.var0[0] * tau2 / ((1.0 - v.pi[0]) * v.var1[0]);
  Eigen::VectorXd ratio(m - 1);
  for (Eigen::Index j = 1; j < m; ++j) {
    const double scale = mu00 / v.mu0[j];
    const double treated = v.q[j] * v.pi[0] * v.var1[j] / (v.pi[j] * v.var1[0]) * scale * scale;
    const double control = v.q[j] * v.pi[0] * v.var0[j] / ((1.0 - v.pi[j]) * v.var1[0]) * tau2 *
                           scale * scale;
    ratio[j - 1] = treated + control + control_term * g[j - 1] * inv_g_sum;
  }
  return normalize_ratios(ratio);
}

WeightResult try_c2(const PointNuisance& v) {
  const auto m = static_cast<Eigen::Index>(v.sites.size());
  if (m == 1) return {target_only(1), WeightFailure::None};
  Eigen::VectorXd ratio(m - 1);
  for (Eigen::Index j = 1; j < m; ++j) {
    ratio[j - 1] = v.q[j] * v.pi[0] * v.var1[j] / (v.pi[j] * v.var1[0]);
  }
  return normalize_ratios(ratio);
}

WeightResult try_c2_control(const PointNuisance& v) {
  const auto m = static_cast<Eigen::Index>(v.sites.size());
  if (m == 1) return {target_only(1), WeightFailure::None};
  Eigen::VectorXd ratio(m - 1);
  for (Eigen::Index j = 1; j < m; ++j) {
    ratio[j - 1] = v.q[j] * (1.0 - v.pi[0]) * v.var0[j] / ((1.0 - v.pi[j]) * v.var0[0]);
  }
  return normalize_ratios(ratio);
}

Eigen::VectorXd unwrap(const WeightResult& r) {
  if (r.failure == WeightFailure::Domain) {
    throw Error(ErrorCode::DomainViolation, "control outcome mean at the ratio floor");
  }
  if (r.failure == WeightFailure::NonFinite) {
    throw Error(ErrorCode::NonFiniteWeight, "site weight ratio is not finite and positive");
  }
  return r.w;
}

Eigen::Index position_of(const std::vector<int>& sites, int s) {
  const auto it = std::find(sites.begin(), sites.end(), s);
  if (it == sites.end()) {
    throw Error(ErrorCode::PreconditionViolation,
                "row from site " + std::to_string(s) + " is outside the participating sites");
  }
  return static_cast<Eigen::Index>(it - sites.begin());
}

void require_mr1_measure(const NuisanceBundle& bundle, const CausalMeasure& measure) {
  if (bundle.sites.size() > 1 && measure.kind() != MeasureKind::RiskRatio) {
    throw Error(ErrorCode::UnsupportedMeasureForMode,
                "MR1 with sources is implemented for the risk ratio only");
  }
}

// H terms given the row's site position, assuming measure checks passed.
Eigen::VectorXd h1_at(const PointNuisance& v, Eigen::Index pos, double y, int a,
                      const CausalMeasure& measure) {
  const auto m = static_cast<Eigen::Index>(v.sites.size());
  Eigen::VectorXd h = Eigen::VectorXd::Zero(m);
  const double mu00 = v.mu0[0];
  const double mu10 = measure.g_inverse(mu00, v.tau);
  if (pos == 0) {
    if (a == 1) {
      h[0] = (y - mu10) / v.pi[0];
    } else {
      // mu1^(k)/mu0^(k) equals tau for every k under a shared risk ratio.
      const double piece = v.tau * (y - mu00) / (1.0 - v.pi[0]);
      for (Eigen::Index j = 1; j < m; ++j) h[j] = piece;
    }
    return h;
  }
  const double mu0k = v.mu0[pos];
  if (a == 1) {
    h[pos] = v.q[pos] / v.pi[pos] * (y - v.tau * mu0k) * mu00 / mu0k;
  } else {
    h[pos] = -v.q[pos] / (1.0 - v.pi[pos]) * (y - mu0k) * mu10 / mu0k;
  }
  return h;
}

Eigen::VectorXd h2_at(const PointNuisance& v, Eigen::Index pos, double y, int a) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(v.sites.size()));
  if (a == 1) h[pos] = v.q[pos] * (y - v.mu1_pooled) / v.pi[pos];
  return h;
}

NuisanceBundle target_view(const NuisanceBundle& bundle) {
  NuisanceBundle out = bundle;
  out.sites = {MultiSiteData::kTargetId};
  return out;
}

void require_target(const std::vector<int>& sites) {
  if (sites.empty() || sites.front() != MultiSiteData::kTargetId) {
    throw Error(ErrorCode::MissingTargetSite, "bundle does not cover the target site");
  }
}

}  // namespace

Eigen::VectorXd c1_weights(const PointNuisance& v, const CausalMeasure& measure) {
  return unwrap(try_c1(v, measure));
}

Eigen::VectorXd c1_weights(const Eigen::Ref<const Eigen::VectorXd>& x, const NuisanceBundle& bundle,
                           const CausalMeasure& measure) {
  return c1_weights(evaluate_nuisance(x, bundle), measure);
}

Eigen::VectorXd c2_weights(const PointNuisance& v) { return unwrap(try_c2(v)); }

Eigen::VectorXd c2_weights(const Eigen::Ref<const Eigen::VectorXd>& x, const NuisanceBundle& bundle) {
  return c2_weights(evaluate_nuisance(x, bundle));
}

Eigen::VectorXd c2_control_weights(const PointNuisance& v) { return unwrap(try_c2_control(v)); }

Eigen::VectorXd h1_terms(const Individual& v, const NuisanceBundle& bundle,
                         const CausalMeasure& measure) {
  require_mr1_measure(bundle, measure);
  const PointNuisance pn = evaluate_nuisance(v.x, bundle);
  const Eigen::Index pos = position_of(bundle.sites, v.s);
  if (pn.sites.size() > 1) {
    for (Eigen::Index j = 0; j < pn.mu0.size(); ++j) {
      if (!measure.in_domain(pn.mu0[j])) {
        throw Error(ErrorCode::DomainViolation, "control outcome mean at the ratio floor");
      }
    }
  }
  return h1_at(pn, pos, v.y, v.a, measure);
}

Eigen::VectorXd h2_terms(const Individual& v, const NuisanceBundle& bundle) {
  if (!bundle.mu1_pooled) {
    throw Error(ErrorCode::PreconditionViolation, "bundle has no pooled treated outcome model");
  }
  const PointNuisance pn = evaluate_nuisance(v.x, bundle);
  return h2_at(pn, position_of(bundle.sites, v.s), v.y, v.a);
}

SiteContribution site_contribution(const SiteDataset& site, const NuisanceBundle& bundle,
                                   Method mode) {
  require_target(bundle.sites);
  const CausalMeasure measure(bundle.measure);
  const bool mr2 = mode == Method::MR2;
  if (mr2 && (!bundle.mu0_pooled || !bundle.mu1_pooled)) {
    throw Error(ErrorCode::PreconditionViolation, "MR2 needs pooled outcome models");
  }
  if (!mr2) require_mr1_measure(bundle, measure);
  const Eigen::Index pos = position_of(bundle.sites, site.site_id());

  SiteContribution c;
  c.site = site.site_id();
  c.psi1.resize(site.n());
  c.psi0.resize(site.n());
  for (Eigen::Index i = 0; i < site.n(); ++i) {
    const Eigen::VectorXd x = site.x().row(i).transpose();
    const double y = site.y()[i];
    const int a = site.a()[i];
    const PointNuisance v = evaluate_nuisance(x, bundle);
    bool fallback = false;
    if (mr2) {
      const WeightResult w1 = try_c2(v);
      const WeightResult w0 = try_c2_control(v);
      fallback = w1.failure != WeightFailure::None || w0.failure != WeightFailure::None;
      const Eigen::VectorXd h = h2_at(v, pos, y, a);
      double h0 = 0.0;
      if (a == 0) h0 = v.q[pos] * (y - v.mu0_pooled) / (1.0 - v.pi[pos]);
      const double base1 = pos == 0 ? v.mu1_pooled : 0.0;
      const double base0 = pos == 0 ? v.mu0_pooled : 0.0;
      c.psi1[i] = base1 + w1.w.dot(h);
      c.psi0[i] = base0 + w0.w[pos] * h0;
    } else {
      const WeightResult w = try_c1(v, measure);
      fallback = w.failure != WeightFailure::None;
      if (pos == 0) {
        const double mu00 = v.mu0[0];
        const double mu10 = measure.g_inverse(mu00, v.tau);
        double aug = 0.0;
        if (a == 1) {
          aug = w.w[0] * (y - mu10) / v.pi[0];
        } else if (!fallback && v.sites.size() > 1) {
          aug = (1.0 - w.w[0]) * v.tau * (y - mu00) / (1.0 - v.pi[0]);
        }
        c.psi1[i] = mu10 + aug;
        c.psi0[i] = mu00 + (a == 0 ? (y - mu00) / (1.0 - v.pi[0]) : 0.0);
      } else {
        c.psi1[i] = fallback ? 0.0 : w.w[pos] * h1_at(v, pos, y, a, measure)[pos];
        c.psi0[i] = 0.0;
      }
    }
    if (fallback) ++c.fallback_rows;
  }
  return c;
}

SiteSums site_sums(const SiteContribution& c) {
  SiteSums s;
  s.site = c.site;
  s.n = c.n();
  const auto len = static_cast<std::size_t>(c.n());
  s.psi1_sum = pairwise_sum(std::span<const double>(c.psi1.data(), len));
  s.psi0_sum = pairwise_sum(std::span<const double>(c.psi0.data(), len));
  s.fallback_rows = c.fallback_rows;
  return s;
}

PointEstimate aggregate_point(std::span<const SiteSums> sums, const CausalMeasure& measure) {
  std::vector<SiteSums> ordered(sums.begin(), sums.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const SiteSums& l, const SiteSums& r) { return l.site < r.site; });
  PointEstimate p;
  double s1 = 0.0;
  double s0 = 0.0;
  for (const auto& s : ordered) {
    if (s.site == MultiSiteData::kTargetId) p.n0 = s.n;
    p.n += s.n;
    s1 += s.psi1_sum;
    s0 += s.psi0_sum;
    p.fallback_rows += s.fallback_rows;
  }
  if (p.n0 == 0) throw Error(ErrorCode::NoTargetRows, "no rows from the target site");
  const double n0 = static_cast<double>(p.n0);
  p.psi1 = s1 / n0;
  p.psi0 = s0 / n0;
  p.p0 = n0 / static_cast<double>(p.n);
  p.psi = measure.apply(p.psi0, p.psi1);
  return p;
}

Eigen::VectorXd site_influence(const SiteContribution& c, const PointEstimate& point,
                               const CausalMeasure& measure, PsiComponent component) {
  const double target = c.site == MultiSiteData::kTargetId ? 1.0 : 0.0;
  Eigen::VectorXd out(c.n());
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    const double phi1 = (c.psi1[i] - target * point.psi1) / point.p0;
    const double phi0 = (c.psi0[i] - target * point.psi0) / point.p0;
    switch (component) {
      case PsiComponent::Psi1: out[i] = phi1; break;
      case PsiComponent::Psi0: out[i] = phi0; break;
      case PsiComponent::Measure:
        out[i] = measure.eif_combine(point.psi0, point.psi1, phi0, phi1);
        break;
    }
  }
  return out;
}

double site_influence_sq_sum(const SiteContribution& c, const PointEstimate& point,
                             const CausalMeasure& measure) {
  const Eigen::VectorXd phi = site_influence(c, point, measure, PsiComponent::Measure);
  const Eigen::VectorXd sq = phi.array().square().matrix();
  return pairwise_sum(std::span<const double>(sq.data(), static_cast<std::size_t>(sq.size())));
}

EstimateReport finalize_report(const PointEstimate& point, double influence_sq_sum, Method method,
                               const CausalMeasure& measure, std::vector<int> sites) {
  EstimateReport r;
  r.psi_hat = point.psi;
  r.psi0_hat = point.psi0;
  r.psi1_hat = point.psi1;
  r.method = method;
  r.measure = measure.kind();
  r.selected_sites = std::move(sites);
  r.n_used = point.n;
  r.fallback_rows = point.fallback_rows;
  const double n = static_cast<double>(point.n);
  const double v = influence_sq_sum / n;
  set_wald_interval(r, std::sqrt(v / n));
  return r;
}

std::vector<SiteContribution> contributions(const MultiSiteData& data,
                                            const NuisanceBundle& bundle, Method mode) {
  require_target(bundle.sites);
  std::vector<SiteContribution> out;
  out.reserve(bundle.sites.size());
  for (int k : bundle.sites) out.push_back(site_contribution(data.site(k), bundle, mode));
  return out;
}

namespace {

Method contribution_mode(Method mode) {
  switch (mode) {
    case Method::MR1:
    case Method::DRt: return Method::MR1;
    case Method::MR2: return Method::MR2;
    default:
      throw Error(ErrorCode::PreconditionViolation,
                  std::string("estimate_measure does not run ") + to_string(mode));
  }
}

PointEstimate point_from(const std::vector<SiteContribution>& cs, const CausalMeasure& measure) {
  std::vector<SiteSums> sums;
  sums.reserve(cs.size());
  for (const auto& c : cs) sums.push_back(site_sums(c));
  return aggregate_point(sums, measure);
}

InfluenceSample stack(const std::vector<SiteContribution>& cs, const PointEstimate& point,
                      const CausalMeasure& measure, PsiComponent component) {
  InfluenceSample s;
  s.component = component;
  s.values.resize(point.n);
  Eigen::Index at = 0;
  for (const auto& c : cs) {
    s.values.segment(at, c.n()) = site_influence(c, point, measure, component);
    s.site.insert(s.site.end(), static_cast<std::size_t>(c.n()), c.site);
    at += c.n();
  }
  return s;
}

ComponentEstimate component_estimate(const std::vector<SiteContribution>& cs, PsiComponent component) {
  // The risk difference never rejects a control mean, so it is used to reduce sums.
  const CausalMeasure rd = risk_difference();
  const PointEstimate point = point_from(cs, rd);
  ComponentEstimate e;
  e.psi = component == PsiComponent::Psi1 ? point.psi1 : point.psi0;
  e.influence = stack(cs, point, rd, component);
  e.fallback_rows = point.fallback_rows;
  return e;
}

}  // namespace

ComponentEstimate estimate_psi1(const MultiSiteData& data, const NuisanceBundle& bundle,
                                Method mode) {
  return component_estimate(contributions(data, bundle, contribution_mode(mode)),
                            PsiComponent::Psi1);
}

ComponentEstimate estimate_psi0_target(const MultiSiteData& data, const NuisanceBundle& bundle) {
  require_target(bundle.sites);
  const NuisanceBundle view = target_view(bundle);
  return component_estimate(contributions(data, view, Method::MR1), PsiComponent::Psi0);
}

EstimateReport estimate_measure(const MultiSiteData& data, const NuisanceBundle& bundle,
                                Method mode, const CausalMeasure& measure) {
  const Method cmode = contribution_mode(mode);
  if (cmode == Method::MR1 && bundle.sites.size() > 1 && mode != Method::DRt &&
      measure.kind() != MeasureKind::RiskRatio) {
    throw Error(ErrorCode::UnsupportedMeasureForMode,
                "MR1 with sources is implemented for the risk ratio only");
  }
  if (cmode == Method::MR1 && bundle.measure != measure.kind()) {
    throw Error(ErrorCode::PreconditionViolation,
                "bundle effect function was fit for a different measure");
  }
  const NuisanceBundle* use = &bundle;
  NuisanceBundle view;
  if (mode == Method::DRt && bundle.sites.size() > 1) {
    view = target_view(bundle);
    use = &view;
  }
  const std::vector<SiteContribution> cs = contributions(data, *use, cmode);
  const PointEstimate point = point_from(cs, measure);
  double sq = 0.0;
  for (const auto& c : cs) sq += site_influence_sq_sum(c, point, measure);
  return finalize_report(point, sq, mode, measure, use->sites);
}

EstimateReport estimate_measure(const MultiSiteData& data, const std::vector<int>& sites,
                                Method mode, const CausalMeasure& measure,
                                const NuisanceConfig& config) {
  const std::vector<int> fit_sites =
      mode == Method::DRt ? std::vector<int>{MultiSiteData::kTargetId} : sites;
  const NuisanceBundle bundle = fit_bundle(data, fit_sites, measure, config);
  return estimate_measure(data, bundle, mode, measure);
}

EstimateReport estimate_dr_t(const MultiSiteData& data, const CausalMeasure& measure,
                             const NuisanceConfig& config) {
  return estimate_measure(data, {MultiSiteData::kTargetId}, Method::DRt, measure, config);
}

InfluenceSample influence_at(const MultiSiteData& data, const NuisanceBundle& bundle, Method mode,
                             const CausalMeasure& measure, double psi0, double psi1,
                             PsiComponent component) {
  const std::vector<SiteContribution> cs = contributions(data, bundle, contribution_mode(mode));
  PointEstimate point = point_from(cs, risk_difference());
  point.psi0 = psi0;
  point.psi1 = psi1;
  point.psi = measure.apply(psi0, psi1);
  return stack(cs, point, measure, component);
}

}  // namespace fedcausal
