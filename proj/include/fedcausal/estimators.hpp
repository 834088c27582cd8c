#pragma once

#include <optional>
#include <span>
#include <vector>

#include "fedcausal/core.hpp"
#include "fedcausal/nuisance.hpp"

namespace fedcausal {

enum class PsiComponent { Psi0, Psi1, Measure };

const char* to_string(PsiComponent c);

/// Per-row influence values over the rows of the participating sites, in
/// ascending site order and row order within a site.
struct InfluenceSample {
  Eigen::VectorXd values;
  std::vector<int> site;
  PsiComponent component = PsiComponent::Measure;

  Eigen::Index size() const { return values.size(); }
  double mean() const;
};

/// Every nuisance value the estimators need at one covariate vector.
struct PointNuisance {
  std::vector<int> sites;
  Eigen::VectorXd pi;     // pi^(k)(x), indexed like sites
  Eigen::VectorXd mu0;    // site-specific control mean
  Eigen::VectorXd q;      // density ratio, q[0] = 1
  Eigen::VectorXd var1;   // treated conditional variance
  Eigen::VectorXd var0;   // control conditional variance
  double tau = 0.0;
  double mu1_pooled = 0.0;
  double mu0_pooled = 0.0;
  bool has_pooled = false;
};

PointNuisance evaluate_nuisance(const Eigen::Ref<const Eigen::VectorXd>& x,
                                const NuisanceBundle& bundle);

/// Site weights under a shared effect function (risk ratio). Throws
/// DomainViolation when a control mean is at the floor and NonFiniteWeight
/// when a ratio is not finite.
Eigen::VectorXd c1_weights(const Eigen::Ref<const Eigen::VectorXd>& x, const NuisanceBundle& bundle,
                           const CausalMeasure& measure = risk_ratio());
Eigen::VectorXd c1_weights(const PointNuisance& v, const CausalMeasure& measure = risk_ratio());

/// Site weights under shared outcome means; depend on treated variances only.
Eigen::VectorXd c2_weights(const Eigen::Ref<const Eigen::VectorXd>& x, const NuisanceBundle& bundle);
Eigen::VectorXd c2_weights(const PointNuisance& v);

/// Mirror of c2_weights for the control mean: control variances and 1 - pi.
Eigen::VectorXd c2_control_weights(const PointNuisance& v);

/// Augmentation terms H^(k)(v), one entry per participating site.
Eigen::VectorXd h1_terms(const Individual& v, const NuisanceBundle& bundle,
                         const CausalMeasure& measure = risk_ratio());
Eigen::VectorXd h2_terms(const Individual& v, const NuisanceBundle& bundle);

/// Per-row estimating-equation contributions of one site. psi1 and psi0 sum
/// (over all rows) to n0 times the respective estimates.
struct SiteContribution {
  int site = 0;
  Eigen::VectorXd psi1;
  Eigen::VectorXd psi0;
  Eigen::Index fallback_rows = 0;

  Eigen::Index n() const { return psi1.size(); }
};

/// Contribution of `site` rows under MR1 (or DR-t when the bundle only
/// covers the target) or MR2. MR1 requires a risk-ratio bundle unless it
/// covers the target only.
SiteContribution site_contribution(const SiteDataset& site, const NuisanceBundle& bundle,
                                   Method mode);

/// Scalar sums a site reports for the point estimate.
struct SiteSums {
  int site = 0;
  Eigen::Index n = 0;
  double psi1_sum = 0.0;
  double psi0_sum = 0.0;
  Eigen::Index fallback_rows = 0;
};

SiteSums site_sums(const SiteContribution& c);

struct PointEstimate {
  double psi0 = 0.0;
  double psi1 = 0.0;
  double psi = 0.0;
  double p0 = 0.0;  // n0 / n
  Eigen::Index n = 0;
  Eigen::Index n0 = 0;
  Eigen::Index fallback_rows = 0;
};

/// Sums reduced in ascending site order.
PointEstimate aggregate_point(std::span<const SiteSums> sums, const CausalMeasure& measure);

/// Influence values of one site's rows at the given point estimate.
Eigen::VectorXd site_influence(const SiteContribution& c, const PointEstimate& point,
                               const CausalMeasure& measure, PsiComponent component);

/// Sum of squared measure-level influence values over one site.
double site_influence_sq_sum(const SiteContribution& c, const PointEstimate& point,
                             const CausalMeasure& measure);

/// se = sqrt(V/n) with V = (sum of squares)/n, Wald interval.
EstimateReport finalize_report(const PointEstimate& point, double influence_sq_sum, Method method,
                               const CausalMeasure& measure, std::vector<int> sites);

struct ComponentEstimate {
  double psi = 0.0;
  InfluenceSample influence;
  Eigen::Index fallback_rows = 0;
};

/// psi1 on the bundle's sites, mode in {MR1, MR2}. NoTargetRows if site 0 is empty.
ComponentEstimate estimate_psi1(const MultiSiteData& data, const NuisanceBundle& bundle,
                                Method mode);

/// Target-only AIPW estimate of the control mean.
ComponentEstimate estimate_psi0_target(const MultiSiteData& data, const NuisanceBundle& bundle);

/// Contributions of every participating site, ascending.
std::vector<SiteContribution> contributions(const MultiSiteData& data,
                                            const NuisanceBundle& bundle, Method mode);

/// Measure-level estimate from a fitted bundle. UnsupportedMeasureForMode
/// for MR1 with risk difference when sources participate.
EstimateReport estimate_measure(const MultiSiteData& data, const NuisanceBundle& bundle,
                                Method mode, const CausalMeasure& measure);

/// Fits nuisances on `sites` and estimates.
EstimateReport estimate_measure(const MultiSiteData& data, const std::vector<int>& sites,
                                Method mode, const CausalMeasure& measure,
                                const NuisanceConfig& config = {});

/// Target-only AIPW for both arms.
EstimateReport estimate_dr_t(const MultiSiteData& data, const CausalMeasure& measure,
                             const NuisanceConfig& config = {});

/// Influence values at externally supplied (psi0, psi1), e.g. the truth.
InfluenceSample influence_at(const MultiSiteData& data, const NuisanceBundle& bundle, Method mode,
                             const CausalMeasure& measure, double psi0, double psi1,
                             PsiComponent component = PsiComponent::Measure);

}  // namespace fedcausal
