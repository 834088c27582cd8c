#include "fedcausal/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

namespace fedcausal {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingTargetSite: return "MissingTargetSite";
    case ErrorCode::EmptyTreatmentArm: return "EmptyTreatmentArm";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DomainViolation: return "DomainViolation";
    case ErrorCode::SingleClassLabels: return "SingleClassLabels";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::NoTargetRows: return "NoTargetRows";
    case ErrorCode::UnsupportedMeasureForMode: return "UnsupportedMeasureForMode";
    case ErrorCode::NonFiniteWeight: return "NonFiniteWeight";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::PreconditionViolation: return "PreconditionViolation";
    case ErrorCode::UnsupportedDgpForm: return "UnsupportedDgpForm";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

namespace {
std::string arm_message(int site, int arm) {
  std::ostringstream os;
  os << "site " << site << " has no rows with a=" << arm;
  return os.str();
}
}  // namespace

EmptyTreatmentArmError::EmptyTreatmentArmError(int site, int arm)
    : Error(ErrorCode::EmptyTreatmentArm, arm_message(site, arm)), site_(site), arm_(arm) {}

SiteDataset::SiteDataset(int site_id, Eigen::VectorXd y, Eigen::MatrixXd x, Eigen::VectorXi a)
    : site_id_(site_id), y_(std::move(y)), x_(std::move(x)), a_(std::move(a)) {
  if (y_.size() == 0) {
    throw Error(ErrorCode::PreconditionViolation,
                "site " + std::to_string(site_id_) + " has no rows");
  }
  if (x_.rows() != y_.size() || a_.size() != y_.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "site " + std::to_string(site_id_) + ": column lengths disagree");
  }
  if (x_.cols() < 1) {
    throw Error(ErrorCode::DimensionMismatch, "covariate dimension must be >= 1");
  }
  for (Eigen::Index i = 0; i < y_.size(); ++i) {
    if (a_[i] != 0 && a_[i] != 1) {
      throw Error(ErrorCode::PreconditionViolation,
                  "treatment must be 0 or 1 (site " + std::to_string(site_id_) + ", row " +
                      std::to_string(i) + ")");
    }
  }
  if (!y_.allFinite() || !x_.allFinite()) {
    throw Error(ErrorCode::PreconditionViolation,
                "non-finite value in site " + std::to_string(site_id_));
  }
}

SiteDataset SiteDataset::from_rows(int site_id, std::span<const Individual> rows) {
  if (rows.empty()) {
    throw Error(ErrorCode::PreconditionViolation,
                "site " + std::to_string(site_id) + " has no rows");
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index p = rows.front().x.size();
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXi a(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Individual& r = rows[static_cast<std::size_t>(i)];
    if (r.s != site_id) {
      throw Error(ErrorCode::PreconditionViolation,
                  "row " + std::to_string(i) + " has s=" + std::to_string(r.s) +
                      " but belongs to site " + std::to_string(site_id));
    }
    if (r.x.size() != p) throw Error(ErrorCode::DimensionMismatch, "ragged covariate rows");
    y[i] = r.y;
    x.row(i) = r.x.transpose();
    a[i] = r.a;
  }
  return SiteDataset(site_id, std::move(y), std::move(x), std::move(a));
}

Individual SiteDataset::row(Eigen::Index i) const {
  return Individual{y_[i], x_.row(i).transpose(), a_[i], site_id_};
}

Eigen::Index SiteDataset::count_arm(int arm) const {
  return (a_.array() == arm).count();
}

SiteDataset SiteDataset::take(std::span<const Eigen::Index> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::VectorXd y(m);
  Eigen::MatrixXd x(m, p());
  Eigen::VectorXi a(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    y[i] = y_[r];
    x.row(i) = x_.row(r);
    a[i] = a_[r];
  }
  return SiteDataset(site_id_, std::move(y), std::move(x), std::move(a));
}

SiteDataset SiteDataset::with_outcome(Eigen::VectorXd y) const {
  return SiteDataset(site_id_, std::move(y), x_, a_);
}

MultiSiteData::MultiSiteData(std::vector<SiteDataset> sites) {
  for (auto& s : sites) {
    if (sites_.empty()) {
      p_ = s.p();
    } else if (s.p() != p_) {
      throw Error(ErrorCode::DimensionMismatch,
                  "site " + std::to_string(s.site_id()) + " has p=" + std::to_string(s.p()) +
                      ", expected " + std::to_string(p_));
    }
    const int id = s.site_id();
    if (sites_.count(id) != 0) {
      throw Error(ErrorCode::PreconditionViolation, "duplicate site " + std::to_string(id));
    }
    n_total_ += s.n();
    sites_.emplace(id, std::move(s));
  }
}

const SiteDataset& MultiSiteData::site(int k) const {
  auto it = sites_.find(k);
  if (it == sites_.end()) {
    if (k == kTargetId) throw Error(ErrorCode::MissingTargetSite, "site 0 absent");
    throw Error(ErrorCode::PreconditionViolation, "site " + std::to_string(k) + " absent");
  }
  return it->second;
}

std::vector<int> MultiSiteData::site_ids() const {
  std::vector<int> ids;
  ids.reserve(sites_.size());
  for (const auto& [k, _] : sites_) ids.push_back(k);
  return ids;
}

MultiSiteData MultiSiteData::subset(std::span<const int> ids) const {
  std::vector<SiteDataset> out;
  for (int k : ids) out.push_back(site(k));
  return MultiSiteData(std::move(out));
}

ValidationReport validate_multisite(const MultiSiteData& data) {
  if (!data.has_site(MultiSiteData::kTargetId)) {
    throw Error(ErrorCode::MissingTargetSite, "site 0 absent");
  }
  ValidationReport report;
  report.p = data.p();
  for (const auto& [k, site] : data.sites()) {
    if (site.p() != data.p()) {
      throw Error(ErrorCode::DimensionMismatch, "site " + std::to_string(k));
    }
    SiteArmCounts c{k, site.n(), site.count_arm(1), site.count_arm(0)};
    if (c.control == 0) throw EmptyTreatmentArmError(k, 0);
    if (c.treated == 0) throw EmptyTreatmentArmError(k, 1);
    report.counts.push_back(c);
  }
  return report;
}

const char* to_string(MeasureKind kind) {
  return kind == MeasureKind::RiskRatio ? "rr" : "rd";
}

MeasureKind parse_measure(const std::string& name) {
  if (name == "rr" || name == "RR") return MeasureKind::RiskRatio;
  if (name == "rd" || name == "RD") return MeasureKind::RiskDifference;
  throw Error(ErrorCode::ConfigError, "unknown measure '" + name + "' (expected rr or rd)");
}

bool CausalMeasure::in_domain(double base) const noexcept {
  if (!std::isfinite(base)) return false;
  if (kind_ == MeasureKind::RiskRatio) return std::abs(base) > floor_;
  return true;
}

void CausalMeasure::check(double base) const {
  if (!in_domain(base)) {
    std::ostringstream os;
    os << "base value " << base << " outside the domain of " << to_string(kind_);
    throw Error(ErrorCode::DomainViolation, os.str());
  }
}

double CausalMeasure::apply(double psi0, double psi1) const {
  check(psi0);
  return kind_ == MeasureKind::RiskRatio ? psi1 / psi0 : psi1 - psi0;
}

double CausalMeasure::g(double mu0, double mu1) const { return apply(mu0, mu1); }

double CausalMeasure::g_inverse(double mu0, double tau) const {
  check(mu0);
  return kind_ == MeasureKind::RiskRatio ? tau * mu0 : tau + mu0;
}

double CausalMeasure::eif_combine(double psi0, double psi1, double phi0, double phi1) const {
  check(psi0);
  if (kind_ == MeasureKind::RiskRatio) return phi1 / psi0 - psi1 / (psi0 * psi0) * phi0;
  return phi1 - phi0;
}

const char* to_string(Method method) {
  switch (method) {
    case Method::MR1: return "MR1";
    case Method::MR2: return "MR2";
    case Method::DRt: return "DR-t";
    case Method::FWMR1: return "FWMR1";
    case Method::FSMR1: return "FSMR1";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "mr1") return Method::MR1;
  if (lower == "mr2") return Method::MR2;
  if (lower == "dr-t" || lower == "drt" || lower == "dr_t") return Method::DRt;
  if (lower == "fwmr1") return Method::FWMR1;
  if (lower == "fsmr1") return Method::FSMR1;
  throw Error(ErrorCode::ConfigError,
              "unknown estimator '" + name + "' (expected mr1, mr2, dr-t, fwmr1, fsmr1)");
}

void set_wald_interval(EstimateReport& report, double se) {
  report.se = se;
  report.ci_lower = report.psi_hat - kZ95 * se;
  report.ci_upper = report.psi_hat + kZ95 * se;
}

double pairwise_sum(std::span<const double> values) {
  // Blocks of 8 are summed left to right, larger spans split in halves.
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace fedcausal
