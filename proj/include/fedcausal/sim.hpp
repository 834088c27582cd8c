#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedcausal/core.hpp"
#include "fedcausal/nuisance.hpp"

namespace fedcausal {

struct NormalLaw {
  double mean = 0.0;
  double var = 1.0;
};

/// Three-site Gaussian generator: X|S=k ~ N(m_k, v_k),
/// logit pi^(k)(x) = intercept + slope_k x, mu0^(k)(x) = x + b_mu_k,
/// tau^(k)(x) = x + b_tau_k, Y(0) ~ N(mu0, sd^2), Y(1) ~ N(mu0 tau, sd^2).
struct DgpParams {
  std::vector<double> site_probs{0.1, 0.4, 0.5};
  std::vector<NormalLaw> covariate{{2.0, 1.0}, {1.0, 4.0}, {2.0, 4.0}};
  double propensity_intercept = -1.0;
  std::vector<double> propensity_slope{0.5, 0.8, 0.3};
  std::vector<double> b_mu{0.0, 0.0, 0.0};
  std::vector<double> b_tau{0.0, 0.0, 0.0};
  Eigen::Index n_total = 1000;
  double noise_sd = 1.0;
  // Site sizes round(p_k n) instead of multinomial draws.
  bool fixed_quota = false;

  int num_sites() const { return static_cast<int>(site_probs.size()); }
  /// ConfigError on inconsistent lengths, probabilities or variances.
  void validate() const;
};

struct ScenarioSpec {
  std::string id;
  DgpParams dgp;
  std::vector<Method> estimators;
  std::vector<std::string> misspec{"i"};
};

/// Built-in scenarios "1.1", "1.2", "2.1", "2.2", "2.3".
std::vector<std::string> scenario_ids();
/// ConfigError naming the valid ids for an unknown id.
ScenarioSpec scenario(const std::string& id);
/// JSON scenario file: {"id", "estimators", "misspec", "dgp": {...}}; absent
/// dgp fields keep their defaults.
ScenarioSpec load_scenario(const std::filesystem::path& path);
void save_scenario(const ScenarioSpec& spec, const std::filesystem::path& path);

/// Rows are grouped by site in ascending order. Deterministic in seed.
MultiSiteData generate(const DgpParams& params, std::uint64_t seed);

struct TrueValues {
  double psi0 = 0.0;
  double psi1 = 0.0;
  double psi = 0.0;
};

/// Target estimand from normal moments when the target has no shifts;
/// otherwise by Gauss-Hermite quadrature.
TrueValues true_psi(const DgpParams& params, MeasureKind measure = MeasureKind::RiskRatio);
/// Quadrature path, exact for the polynomial moments involved.
TrueValues true_psi_numeric(const DgpParams& params,
                            MeasureKind measure = MeasureKind::RiskRatio);

/// Probabilists' Gauss-Hermite nodes and weights (weights sum to 1).
void gauss_hermite(int order, std::vector<double>& nodes, std::vector<double>& weights);

/// Bundle holding the data-generating nuisance functions in the default
/// feature bases. Pooled outcome models are the target's. UnsupportedDgpForm
/// for non-default bases or multivariate covariates.
NuisanceBundle oracle_bundle(const DgpParams& params, const std::vector<int>& sites,
                             const CausalMeasure& measure, const NuisanceConfig& config = {});

/// Misspecification types "i".."iv" for the multi-site estimators.
MisspecSpec misspec_preset(const std::string& type);

}  // namespace fedcausal
