#include "fedcausal/pfws.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "fedcausal/serialize.hpp"

namespace fedcausal {

ThresholdGrid::ThresholdGrid(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error(ErrorCode::ConfigError, "threshold grid is empty");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const double e = values_[i];
    if (!(e > 0.0 && e <= 1.0)) {
      throw Error(ErrorCode::ConfigError, "thresholds must lie in (0, 1]");
    }
    if (i > 0 && !(e > values_[i - 1])) {
      throw Error(ErrorCode::ConfigError, "thresholds must be strictly increasing");
    }
  }
}

ThresholdGrid ThresholdGrid::standard() {
  std::vector<double> v;
  for (int i = 1; i <= 20; ++i) v.push_back(i / 20.0);
  return ThresholdGrid(std::move(v));
}

std::vector<int> selected_sites(const Eigen::VectorXd& weights, const std::vector<int>& site_ids,
                                double e) {
  if (weights.size() != static_cast<Eigen::Index>(site_ids.size())) {
    throw Error(ErrorCode::DimensionMismatch, "one weight per site is required");
  }
  std::vector<int> out{MultiSiteData::kTargetId};
  for (std::size_t j = 0; j < site_ids.size(); ++j) {
    if (site_ids[j] == MultiSiteData::kTargetId) continue;
    if (weights[static_cast<Eigen::Index>(j)] >= e) out.push_back(site_ids[j]);
  }
  return out;
}

// ---------------------------------------------------------------- in-process

InProcessEstimator::InProcessEstimator(const MultiSiteData& data, FedConfig config)
    : data_(data), config_(std::move(config)), ids_(data.site_ids()) {
  if (!data_.has_site(MultiSiteData::kTargetId)) {
    throw Error(ErrorCode::MissingTargetSite, "data have no target site (site 0)");
  }
  if (config_.nuisance.tau_strategy != TauStrategy::TreatedProductRegression) {
    throw Error(ErrorCode::ConfigError, "set estimates fit tau by the treated product regression");
  }
}

void InProcessEstimator::set_bootstrap(const BootstrapPlan& plan) {
  plan.validate();
  plan_ = plan;
  current_ = -2;
  resampled_.reset();
  enter(-2);
}

const MultiSiteData& InProcessEstimator::replicate_data(int replicate) {
  if (replicate < 0) return data_;
  if (current_ != replicate) {
    resampled_ = bootstrap_replicate(data_, plan_, replicate);
    current_ = replicate;
  }
  return *resampled_;
}

void InProcessEstimator::enter(int fit_replicate) {
  if (fit_key_ == fit_replicate) return;
  if (fit_key_ == -1) {
    original_locals_ = std::move(locals_);
    original_ratios_ = std::move(ratios_);
  }
  locals_.clear();
  ratios_.clear();
  if (fit_replicate == -1) {
    locals_ = original_locals_;
    ratios_ = original_ratios_;
  }
  fit_key_ = fit_replicate;
}

EstimateReport InProcessEstimator::estimate(const std::vector<int>& sites, int replicate) {
  std::vector<int> s = sites;
  std::sort(s.begin(), s.end());
  if (s.empty() || s.front() != MultiSiteData::kTargetId) {
    throw Error(ErrorCode::MissingTargetSite, "site set must contain the target");
  }
  const int fit_replicate = replicate >= 0 && !plan_.refit ? -1 : replicate;
  const MultiSiteData& fit_data = replicate_data(fit_replicate);
  enter(fit_replicate);
  std::map<int, LocalModels> locals;
  std::map<int, DensityRatioModel> ratios;
  std::map<int, GlmModel> mu0;
  for (int k : s) {
    auto it = locals_.find(k);
    if (it == locals_.end()) it = locals_.emplace(k, fit_local_models(fit_data.site(k), config_.nuisance)).first;
    locals.emplace(k, it->second);
    mu0.emplace(k, it->second.mu0);
    if (k == MultiSiteData::kTargetId) continue;
    auto r = ratios_.find(k);
    if (r == ratios_.end()) r = ratios_.emplace(k, fit_density_ratio(fit_data, k, config_.nuisance)).first;
    ratios.emplace(k, r->second);
  }
  const CausalMeasure measure(config_.measure);
  TauModel tau = fit_tau(fit_data, s, measure, config_.nuisance, &mu0);
  const NuisanceBundle bundle = assemble_bundle(s, config_.measure, locals, ratios, std::move(tau));
  return estimate_measure(replicate_data(replicate), bundle, s.size() == 1 ? Method::DRt : Method::MR1,
                          measure);
}

FwResult InProcessEstimator::fit_weights() {
  std::vector<SiteNode> nodes = make_nodes(data_, config_.nuisance);
  MemoryTransport transport;
  Federation fed(transport, nodes, config_);
  return fed.fit_weights();
}

// ---------------------------------------------------------------- replicates

ReplicateTable::ReplicateTable(SetEstimator& estimator, BootstrapPlan plan)
    : est_(estimator), plan_(plan) {
  plan_.validate();
}

void ReplicateTable::ensure(const std::vector<std::vector<int>>& sets) {
  std::vector<std::vector<int>> missing;
  for (auto s : sets) {
    std::sort(s.begin(), s.end());
    if (!values_.count(s) && std::find(missing.begin(), missing.end(), s) == missing.end()) {
      missing.push_back(s);
    }
  }
  if (missing.empty()) return;
  est_.set_bootstrap(plan_);
  std::vector<ReplicateValues> out(missing.size());
  for (int b = 0; b < plan_.B; ++b) {
    for (std::size_t i = 0; i < missing.size(); ++i) {
      const EstimateReport r = est_.estimate(missing[i], b);
      out[i].psi.push_back(r.psi_hat);
      out[i].psi0.push_back(r.psi0_hat);
      out[i].psi1.push_back(r.psi1_hat);
    }
  }
  for (std::size_t i = 0; i < missing.size(); ++i) values_[missing[i]] = std::move(out[i]);
}

const ReplicateValues& ReplicateTable::at(const std::vector<int>& sites) const {
  std::vector<int> s = sites;
  std::sort(s.begin(), s.end());
  const auto it = values_.find(s);
  if (it == values_.end()) throw Error(ErrorCode::PreconditionViolation, "set has no replicates yet");
  return it->second;
}

// ---------------------------------------------------------------- curve

namespace {

std::string join_sites(const std::vector<int>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ";" : "") + std::to_string(s[i]);
  return out;
}

double sample_sd(const std::vector<double>& v) { return std::sqrt(sample_covariance(v, v)); }

}  // namespace

std::string MseCurve::to_csv() const {
  std::ostringstream out;
  out << "e,selected,psi,mse_hat\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%s,%.17g,%.17g\n", p.e, join_sites(p.selected).c_str(),
                  p.psi, p.mse_hat);
    out << buf;
  }
  return out.str();
}

std::string MseCurve::digest() const { return fnv1a_hex(to_csv()); }

double sample_covariance(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorCode::PreconditionViolation, "covariance needs two equal samples of size >= 2");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / (n - 1.0);
}

EstimateReport psi_at_threshold(double e, const Eigen::VectorXd& weights, SetEstimator& estimator) {
  if (!(e > 0.0 && e <= 1.0)) throw Error(ErrorCode::PreconditionViolation, "threshold outside (0, 1]");
  const auto s = selected_sites(weights, estimator.site_ids(), e);
  EstimateReport r = estimator.estimate(s, -1);
  r.method = Method::MR1;
  return r;
}

MseCurve mse_curve(const ThresholdGrid& grid, const Eigen::VectorXd& weights,
                   SetEstimator& estimator, ReplicateTable& table) {
  const std::vector<int> target{MultiSiteData::kTargetId};
  std::vector<std::vector<int>> sets{target};
  for (double e : grid.values()) sets.push_back(selected_sites(weights, estimator.site_ids(), e));
  table.ensure(sets);

  std::map<std::vector<int>, double> psi;
  for (const auto& s : sets) {
    if (!psi.count(s)) psi[s] = estimator.estimate(s, -1).psi_hat;
  }
  const double psi_target = psi.at(target);
  const auto& boot_target = table.at(target).psi;
  const double var_target = sample_covariance(boot_target, boot_target);

  MseCurve curve;
  for (std::size_t i = 0; i < grid.values().size(); ++i) {
    MsePoint p;
    p.e = grid.values()[i];
    p.selected = sets[i + 1];
    p.psi = psi.at(p.selected);
    p.cov_hat = sample_covariance(table.at(p.selected).psi, boot_target);
    p.var_target = var_target;
    const double bias = p.psi - psi_target;
    p.mse_hat = bias * bias + 2.0 * p.cov_hat - var_target;
    curve.points.push_back(std::move(p));
  }
  return curve;
}

double select_threshold(const MseCurve& curve) {
  if (curve.points.empty()) throw Error(ErrorCode::PreconditionViolation, "MSE curve is empty");
  double best = curve.points.front().mse_hat;
  for (const auto& p : curve.points) best = std::min(best, p.mse_hat);
  double e = curve.points.front().e;
  for (const auto& p : curve.points) {
    if (p.mse_hat == best) e = std::max(e, p.e);
  }
  return e;
}

FsResult estimate_fs(const Eigen::VectorXd& weights, SetEstimator& estimator,
                     const ThresholdGrid& grid, ReplicateTable& table) {
  FsResult out;
  out.curve = mse_curve(grid, weights, estimator, table);
  out.e_star = select_threshold(out.curve);
  const auto s = selected_sites(weights, estimator.site_ids(), out.e_star);
  out.report = estimator.estimate(s, -1);
  out.report.method = Method::FSMR1;
  out.report.bootstrap_se = sample_sd(table.at(s).psi);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", out.e_star);
  out.report.audit["e_star"] = buf;
  out.report.audit["curve_digest"] = out.curve.digest();
  out.report.audit["B"] = std::to_string(table.plan().B);
  out.report.audit["seed"] = std::to_string(table.plan().seed);
  return out;
}

EstimateReport estimate_fw(const FwResult& fw, SetEstimator& estimator, ReplicateTable& table) {
  const CausalMeasure measure(estimator.measure());
  const Eigen::VectorXd& w = fw.weights.w;
  if (w.size() != static_cast<Eigen::Index>(fw.pairs.size())) {
    throw Error(ErrorCode::DimensionMismatch, "one weight per pairwise estimate is required");
  }
  std::vector<std::vector<int>> sets;
  for (const auto& p : fw.pairs) {
    sets.push_back(p.k == MultiSiteData::kTargetId ? std::vector<int>{p.k}
                                                   : std::vector<int>{MultiSiteData::kTargetId, p.k});
  }
  table.ensure(sets);

  EstimateReport r;
  r.method = Method::FWMR1;
  r.measure = measure.kind();
  r.psi0_hat = fw.target_only.psi0_hat;
  for (std::size_t j = 0; j < fw.pairs.size(); ++j) {
    r.psi1_hat += w[static_cast<Eigen::Index>(j)] * fw.pairs[j].psi1_pair;
  }
  r.psi_hat = measure.apply(r.psi0_hat, r.psi1_hat);
  r.selected_sites = estimator.site_ids();
  for (const auto& p : fw.pairs) {
    r.n_used += p.k == MultiSiteData::kTargetId ? p.report.n_used
                                                : p.report.n_used - fw.target_only.n_used;
  }

  const auto& psi0 = table.at(sets[0]).psi0;
  std::vector<double> boot(psi0.size());
  for (std::size_t b = 0; b < boot.size(); ++b) {
    double psi1 = 0.0;
    for (std::size_t j = 0; j < sets.size(); ++j) {
      psi1 += w[static_cast<Eigen::Index>(j)] * table.at(sets[j]).psi1[b];
    }
    boot[b] = measure.apply(psi0[b], psi1);
  }
  const double se = sample_sd(boot);
  set_wald_interval(r, se);
  r.bootstrap_se = se;
  std::string ws;
  char buf[64];
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%s%.17g", j ? "," : "", w[j]);
    ws += buf;
  }
  r.audit["weights"] = ws;
  std::snprintf(buf, sizeof buf, "%.17g", fw.weights.lambda);
  r.audit["lambda"] = buf;
  r.audit["B"] = std::to_string(table.plan().B);
  r.audit["seed"] = std::to_string(table.plan().seed);
  return r;
}

RunResult run_estimators(SetEstimator& estimator, const RunOptions& options,
                         const MultiSiteData* pooled, const NuisanceConfig& nuisance) {
  RunResult out;
  const std::vector<int> all = estimator.site_ids();
  const CausalMeasure measure(estimator.measure());
  out.reports.push_back(estimator.estimate({MultiSiteData::kTargetId}, -1));
  out.reports.back().method = Method::DRt;
  std::optional<ReplicateTable> table;
  auto replicates = [&]() -> ReplicateTable& {
    if (!table) table.emplace(estimator, options.bootstrap);
    return *table;
  };
  for (Method m : options.estimators) {
    switch (m) {
      case Method::DRt:
        break;
      case Method::MR1: {
        EstimateReport r = estimator.estimate(all, -1);
        r.method = Method::MR1;
        out.reports.push_back(r);
        break;
      }
      case Method::MR2: {
        if (!pooled) throw Error(ErrorCode::ConfigError, "MR2 needs pooled row access; not available here");
        out.reports.push_back(estimate_measure(*pooled, all, Method::MR2, measure, nuisance));
        break;
      }
      case Method::FWMR1: {
        if (!out.weights) out.weights = estimator.fit_weights();
        out.reports.push_back(estimate_fw(*out.weights, estimator, replicates()));
        break;
      }
      case Method::FSMR1: {
        if (!out.weights) out.weights = estimator.fit_weights();
        const ThresholdGrid grid =
            options.thresholds.empty() ? ThresholdGrid::standard() : ThresholdGrid(options.thresholds);
        out.selection = estimate_fs(out.weights->weights.w, estimator, grid, replicates());
        out.reports.push_back(out.selection->report);
        break;
      }
    }
  }
  return out;
}

}  // namespace fedcausal
