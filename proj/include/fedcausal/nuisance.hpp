#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "fedcausal/core.hpp"
#include "fedcausal/glm.hpp"

namespace fedcausal {

enum class VarianceMode { Constant, Regression };

/// How the shared effect function tau(x) is estimated.
enum class TauStrategy {
  // Treated rows: Y ~ mu0_s(x) * tau(x) (RR) or Y - mu0_s(x) ~ tau(x) (RD).
  TreatedProductRegression,
  // Regress g_{mu0(x)}(mu1(x)) from per-site outcome fits on x over all rows.
  PseudoResponse,
};

const char* to_string(VarianceMode m);
const char* to_string(TauStrategy s);

struct NuisanceConfig {
  double propensity_clip = 0.01;
  ClipBounds ratio_clip{1e-3, 1e3};
  double variance_floor = 1e-4;
  FeatureMap propensity_features{FeatureTransform::Identity, Basis::Linear};
  FeatureMap outcome_features{FeatureTransform::Identity, Basis::Quadratic};
  FeatureMap ratio_features{FeatureTransform::Identity, Basis::Quadratic};
  FeatureMap tau_features{FeatureTransform::Identity, Basis::Linear};
  VarianceMode variance_mode = VarianceMode::Constant;
  TauStrategy tau_strategy = TauStrategy::TreatedProductRegression;
  // When set, every conditional variance is this constant (oracle mode).
  std::optional<double> oracle_variance;
  LogisticOptions logistic;
};

/// Effect function tau(x) for a causal measure, linear in its features.
struct TauModel {
  MeasureKind measure = MeasureKind::RiskRatio;
  GlmModel model;

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const { return model.predict(x); }
};

/// q^(k)(x) = pr(S=0|x) / pr(S=k|x) from a target-vs-k membership logit.
struct DensityRatioModel {
  int k = 0;
  GlmModel logit;
  // log(n0 / nk); the covariate-density ratio is q(x) * exp(-prior_correction).
  double prior_correction = 0.0;
  ClipBounds clip{1e-3, 1e3};

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double covariate_density_ratio(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct VarianceModel {
  VarianceMode mode = VarianceMode::Constant;
  double value = 1.0;
  std::optional<GlmModel> regression;
  double floor = 1e-4;

  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

/// All fitted nuisance functions for one set of participating sites.
struct NuisanceBundle {
  std::vector<int> sites;  // ascending, starts with 0
  MeasureKind measure = MeasureKind::RiskRatio;
  std::map<int, GlmModel> propensity;
  std::map<int, GlmModel> mu0;
  std::map<int, GlmModel> mu1;
  std::optional<GlmModel> mu0_pooled;
  std::optional<GlmModel> mu1_pooled;
  TauModel tau;
  std::map<int, DensityRatioModel> density_ratio;         // k != 0
  std::map<std::pair<int, int>, VarianceModel> cond_var;  // (a, k)

  const GlmModel& pi(int k) const;
  const GlmModel& mu0_of(int k) const;
  double q(int k, const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double sigma2(int a, int k, const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

GlmModel fit_propensity(const MultiSiteData& data, int k, const NuisanceConfig& config = {});

/// Models a site fits from its own rows only.
struct LocalModels {
  int site = 0;
  GlmModel propensity;
  GlmModel mu0;
  GlmModel mu1;
  VarianceModel var0;
  VarianceModel var1;
};

LocalModels fit_local_models(const SiteDataset& site, const NuisanceConfig& config = {});

/// Bundle from per-site local models, pairwise density ratios and tau.
NuisanceBundle assemble_bundle(std::vector<int> sites, MeasureKind measure,
                               const std::map<int, LocalModels>& locals,
                               const std::map<int, DensityRatioModel>& ratios, TauModel tau);

/// Per-site contribution to the target-vs-k membership logit (label 1 = target).
LogisticStats membership_stats(const SiteDataset& site, bool is_target, const FeatureMap& features,
                               const Eigen::VectorXd& beta);

DensityRatioModel make_density_ratio(int k, GlmModel logit, Eigen::Index n0, Eigen::Index nk,
                                     const NuisanceConfig& config);

DensityRatioModel fit_density_ratio(const MultiSiteData& data, int k,
                                    const NuisanceConfig& config = {});

struct OutcomeModels {
  GlmModel mu0;
  GlmModel mu1;
};

/// Arm-wise regressions in site k. With pooled_treated, mu1 is fit on the
/// treated rows of every site in `pool_sites` jointly.
OutcomeModels fit_outcome_models(const MultiSiteData& data, int k, bool pooled_treated,
                                 const std::vector<int>& pool_sites = {},
                                 const NuisanceConfig& config = {});

/// Pooled regression of Y on x over arm `a` rows of the listed sites.
GlmModel fit_pooled_outcome(const MultiSiteData& data, int a, const std::vector<int>& sites,
                            const NuisanceConfig& config = {});

/// Per-site normal-equation sums for the treated product regression of tau.
LinearStats tau_stats(const SiteDataset& site, const GlmModel& mu0, const CausalMeasure& measure,
                      const FeatureMap& tau_features);

TauModel tau_from_stats(const LinearStats& stats, const CausalMeasure& measure,
                        const FeatureMap& tau_features);

/// Shared effect function over `sites`. mu0 fits are used when supplied,
/// otherwise fit per site.
TauModel fit_tau(const MultiSiteData& data, const std::vector<int>& sites,
                 const CausalMeasure& measure, const NuisanceConfig& config = {},
                 const std::map<int, GlmModel>* mu0 = nullptr);

VarianceModel fit_cond_variance(const MultiSiteData& data, int a, int k, VarianceMode mode,
                                const NuisanceConfig& config = {});

/// Fits every nuisance needed by MR1, MR2 and DR-t on the listed sites.
NuisanceBundle fit_bundle(const MultiSiteData& data, const std::vector<int>& sites,
                          const CausalMeasure& measure, const NuisanceConfig& config = {});

enum class NuisanceKind { Propensity, Mu0, DensityRatio, Tau };

struct NuisanceId {
  NuisanceKind kind;
  int site = -1;  // ignored for Tau

  bool operator==(const NuisanceId&) const = default;
};

struct MisspecSpec {
  std::vector<NuisanceId> targets;
  FeatureTransform distortion = FeatureTransform::DropLast;

  bool empty() const { return targets.empty(); }
  /// Targets that exist for the participating sites.
  MisspecSpec restricted_to(const std::vector<int>& sites) const;
};

/// Refits targeted models with the distorted feature transform; untouched
/// models are copied unchanged. UnknownTarget if a target is absent.
NuisanceBundle apply_misspec(const NuisanceBundle& bundle, const MultiSiteData& data,
                             const MisspecSpec& spec, const NuisanceConfig& config = {});

}  // namespace fedcausal
