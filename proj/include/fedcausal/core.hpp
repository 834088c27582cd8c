#pragma once

#include <Eigen/Core>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedcausal/error.hpp"

namespace fedcausal {

/// One observed tuple V = (Y, X, A, S).
struct Individual {
  double y = 0.0;
  Eigen::VectorXd x;
  int a = 0;
  int s = 0;
};

/// Rows of a single site, stored column-wise. Immutable after construction.
class SiteDataset {
 public:
  SiteDataset() = default;

  /// Throws DimensionMismatch / PreconditionViolation on inconsistent columns,
  /// a values outside {0,1}, non-finite entries or zero rows.
  SiteDataset(int site_id, Eigen::VectorXd y, Eigen::MatrixXd x, Eigen::VectorXi a);

  static SiteDataset from_rows(int site_id, std::span<const Individual> rows);

  int site_id() const noexcept { return site_id_; }
  Eigen::Index n() const noexcept { return y_.size(); }
  Eigen::Index p() const noexcept { return x_.cols(); }

  const Eigen::VectorXd& y() const noexcept { return y_; }
  const Eigen::MatrixXd& x() const noexcept { return x_; }
  const Eigen::VectorXi& a() const noexcept { return a_; }

  Individual row(Eigen::Index i) const;

  Eigen::Index count_arm(int arm) const;

  /// Rows whose index appears in `rows` (duplicates allowed, order kept).
  SiteDataset take(std::span<const Eigen::Index> rows) const;

  /// Copy with y replaced.
  SiteDataset with_outcome(Eigen::VectorXd y) const;

 private:
  int site_id_ = 0;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  Eigen::VectorXi a_;
};

/// All sites of the federation, keyed by site id; site 0 is the target.
class MultiSiteData {
 public:
  static constexpr int kTargetId = 0;

  MultiSiteData() = default;
  /// Throws DimensionMismatch if covariate dimensions differ.
  explicit MultiSiteData(std::vector<SiteDataset> sites);

  bool has_site(int k) const { return sites_.count(k) > 0; }
  const SiteDataset& site(int k) const;
  const SiteDataset& target() const { return site(kTargetId); }

  std::vector<int> site_ids() const;
  int num_sites() const { return static_cast<int>(sites_.size()); }
  Eigen::Index p() const noexcept { return p_; }
  Eigen::Index n_total() const noexcept { return n_total_; }

  /// Keeps only the listed sites (must exist).
  MultiSiteData subset(std::span<const int> ids) const;

  const std::map<int, SiteDataset>& sites() const noexcept { return sites_; }

 private:
  std::map<int, SiteDataset> sites_;
  Eigen::Index p_ = 0;
  Eigen::Index n_total_ = 0;
};

struct SiteArmCounts {
  int site = 0;
  Eigen::Index n = 0;
  Eigen::Index treated = 0;
  Eigen::Index control = 0;
};

struct ValidationReport {
  std::vector<SiteArmCounts> counts;
  Eigen::Index p = 0;
};

/// Target present, both arms in every site, uniform p. Read-only.
ValidationReport validate_multisite(const MultiSiteData& data);

enum class MeasureKind { RiskRatio, RiskDifference };

const char* to_string(MeasureKind kind);
MeasureKind parse_measure(const std::string& name);

/// Causal contrast m(psi0, psi1) with the decomposition
/// E{Y(1)|X} = g^{-1}_{mu0(X)}(tau(X)).
class CausalMeasure {
 public:
  static constexpr double kDefaultFloor = 1e-10;

  explicit CausalMeasure(MeasureKind kind = MeasureKind::RiskRatio, double floor = kDefaultFloor)
      : kind_(kind), floor_(floor) {}

  MeasureKind kind() const noexcept { return kind_; }
  double floor() const noexcept { return floor_; }

  /// True when `base` is a legal first argument (RR: |base| > floor).
  bool in_domain(double base) const noexcept;

  double apply(double psi0, double psi1) const;
  /// g_{mu0}(mu1): mu1/mu0 (RR) or mu1 - mu0 (RD).
  double g(double mu0, double mu1) const;
  /// g^{-1}_{mu0}(tau): tau*mu0 (RR) or tau + mu0 (RD).
  double g_inverse(double mu0, double tau) const;
  /// Pathwise derivative of m along (phi0, phi1).
  double eif_combine(double psi0, double psi1, double phi0, double phi1) const;

 private:
  void check(double base) const;

  MeasureKind kind_;
  double floor_;
};

inline CausalMeasure risk_ratio() { return CausalMeasure(MeasureKind::RiskRatio); }
inline CausalMeasure risk_difference() { return CausalMeasure(MeasureKind::RiskDifference); }

enum class Method { MR1, MR2, DRt, FWMR1, FSMR1 };

const char* to_string(Method method);
Method parse_method(const std::string& name);

/// 97.5% standard normal quantile used for all Wald intervals.
inline constexpr double kZ95 = 1.959964;

struct EstimateReport {
  double psi_hat = 0.0;
  double psi0_hat = 0.0;
  double psi1_hat = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  Method method = Method::DRt;
  MeasureKind measure = MeasureKind::RiskRatio;
  std::vector<int> selected_sites;
  Eigen::Index n_used = 0;
  // Rows that fell back to target-only weights.
  Eigen::Index fallback_rows = 0;
  std::optional<double> bootstrap_se;
  std::map<std::string, std::string> audit;

  bool covers(double truth) const { return ci_lower <= truth && truth <= ci_upper; }
  double ci_length() const { return ci_upper - ci_lower; }
};

/// Fills se and the Wald interval psi_hat -/+ z*se.
void set_wald_interval(EstimateReport& report, double se);

/// Deterministic pairwise summation; the reduction order depends only on size.
double pairwise_sum(std::span<const double> values);

}  // namespace fedcausal
