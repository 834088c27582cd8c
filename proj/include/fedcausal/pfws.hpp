#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedcausal/bootstrap.hpp"
#include "fedcausal/federation.hpp"

namespace fedcausal {

/// Candidate selection thresholds, strictly increasing in (0, 1].
class ThresholdGrid {
 public:
  /// ConfigError unless nonempty, strictly increasing and inside (0, 1].
  explicit ThresholdGrid(std::vector<double> values);
  /// {0.05, 0.10, ..., 1.00}.
  static ThresholdGrid standard();
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
};

/// Target plus every source whose weight is at least e. `weights` is indexed
/// like `site_ids` (ascending, target first).
std::vector<int> selected_sites(const Eigen::VectorXd& weights, const std::vector<int>& site_ids,
                                double e);

/// Estimates psi on a set of sites, for the original data (replicate -1) or a
/// bootstrap replicate. Sets are ascending and start with the target.
class SetEstimator {
 public:
  virtual ~SetEstimator() = default;
  virtual const std::vector<int>& site_ids() const = 0;
  virtual MeasureKind measure() const = 0;
  virtual void set_bootstrap(const BootstrapPlan& plan) = 0;
  virtual EstimateReport estimate(const std::vector<int>& sites, int replicate) = 0;
  /// Federated weights on the original data.
  virtual FwResult fit_weights() = 0;
};

/// Works on a MultiSiteData held in memory. Local fits, ratios and tau are
/// cached per replicate, so reports equal the federated ones bit for bit.
class InProcessEstimator : public SetEstimator {
 public:
  InProcessEstimator(const MultiSiteData& data, FedConfig config);

  const std::vector<int>& site_ids() const override { return ids_; }
  MeasureKind measure() const override { return config_.measure; }
  void set_bootstrap(const BootstrapPlan& plan) override;
  EstimateReport estimate(const std::vector<int>& sites, int replicate) override;
  FwResult fit_weights() override;

 private:
  const MultiSiteData& replicate_data(int replicate);
  void enter(int fit_replicate);

  const MultiSiteData& data_;
  FedConfig config_;
  std::vector<int> ids_;
  BootstrapPlan plan_;
  int current_ = -2;
  std::optional<MultiSiteData> resampled_;
  int fit_key_ = -2;
  std::map<int, LocalModels> locals_;
  std::map<int, DensityRatioModel> ratios_;
  std::map<int, LocalModels> original_locals_;
  std::map<int, DensityRatioModel> original_ratios_;
};

/// Drives a Federation; every number crosses the transport.
class FederatedEstimator : public SetEstimator {
 public:
  explicit FederatedEstimator(Federation& federation) : fed_(federation) {}

  const std::vector<int>& site_ids() const override { return fed_.site_ids(); }
  MeasureKind measure() const override { return fed_.config().measure; }
  void set_bootstrap(const BootstrapPlan& plan) override { fed_.set_bootstrap(plan); }
  EstimateReport estimate(const std::vector<int>& sites, int replicate) override {
    return fed_.estimate_set(sites, replicate, sites.size() == 1 ? Method::DRt : Method::MR1);
  }
  FwResult fit_weights() override { return fed_.fit_weights(); }

 private:
  Federation& fed_;
};

struct ReplicateValues {
  std::vector<double> psi;
  std::vector<double> psi0;
  std::vector<double> psi1;
};

/// Bootstrap estimates per site set. Replicates run in index order; each set
/// is computed once.
class ReplicateTable {
 public:
  ReplicateTable(SetEstimator& estimator, BootstrapPlan plan);

  const BootstrapPlan& plan() const { return plan_; }
  /// Computes any missing sets over all replicates.
  void ensure(const std::vector<std::vector<int>>& sets);
  const ReplicateValues& at(const std::vector<int>& sites) const;

 private:
  SetEstimator& est_;
  BootstrapPlan plan_;
  std::map<std::vector<int>, ReplicateValues> values_;
};

struct MsePoint {
  double e = 0.0;
  std::vector<int> selected;
  double psi = 0.0;
  double mse_hat = 0.0;
  double cov_hat = 0.0;
  double var_target = 0.0;
};

struct MseCurve {
  std::vector<MsePoint> points;
  /// Header `e,selected,psi,mse_hat`; sites joined by ';'.
  std::string to_csv() const;
  std::string digest() const;
};

/// Sample covariance with divisor B - 1.
double sample_covariance(const std::vector<double>& x, const std::vector<double>& y);

/// MR1 on the sites selected at e, on the original data.
EstimateReport psi_at_threshold(double e, const Eigen::VectorXd& weights, SetEstimator& estimator);

/// (psi_e - psi_target)^2 + 2 cov(psi_e, psi_target) - var(psi_target) per
/// threshold, covariances over bootstrap replicates. Raw values, no flooring.
MseCurve mse_curve(const ThresholdGrid& grid, const Eigen::VectorXd& weights,
                   SetEstimator& estimator, ReplicateTable& table);

/// Largest threshold among the minimizers. PreconditionViolation if empty.
double select_threshold(const MseCurve& curve);

struct FsResult {
  EstimateReport report;
  MseCurve curve;
  double e_star = 0.0;
};

/// Federated selective estimate: MR1 on the set chosen at e*, plug-in se,
/// bootstrap se reported alongside.
FsResult estimate_fs(const Eigen::VectorXd& weights, SetEstimator& estimator,
                     const ThresholdGrid& grid, ReplicateTable& table);

/// Federated weighted estimate at (target psi0, sum_k w_k psi1<k>); bootstrap
/// se with the weights held fixed.
EstimateReport estimate_fw(const FwResult& fw, SetEstimator& estimator, ReplicateTable& table);

struct RunOptions {
  std::vector<Method> estimators{Method::DRt, Method::MR1, Method::FWMR1, Method::FSMR1};
  BootstrapPlan bootstrap;
  std::vector<double> thresholds;  // empty: standard grid
};

struct RunResult {
  // DR-t first, then the requested estimators in request order.
  std::vector<EstimateReport> reports;
  std::optional<FwResult> weights;
  std::optional<FsResult> selection;
};

/// DR-t plus the requested estimators on every site of the estimator. MR2
/// needs `pooled` (row access); ConfigError without it.
RunResult run_estimators(SetEstimator& estimator, const RunOptions& options,
                         const MultiSiteData* pooled = nullptr, const NuisanceConfig& nuisance = {});

}  // namespace fedcausal
