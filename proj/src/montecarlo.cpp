#include "fedcausal/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "fedcausal/rng.hpp"

namespace fedcausal {

const MetricsRow& MetricsTable::find(const std::string& estimator, const std::string& misspec) const {
  for (const auto& r : rows) {
    if (r.estimator == estimator && r.misspec == misspec) return r;
  }
  throw Error(ErrorCode::PreconditionViolation, "no row for " + estimator + " / " + misspec);
}

int worker_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FEDCAUSAL_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

MetricsRow summarize(const std::vector<Draw>& draws, double truth) {
  MetricsRow r;
  r.M = static_cast<int>(draws.size());
  if (draws.empty()) return r;
  const double m = static_cast<double>(draws.size());
  double mean = 0.0;
  for (const auto& d : draws) mean += d.psi;
  mean /= m;
  double ss = 0.0;
  double sq_err = 0.0;
  for (const auto& d : draws) {
    ss += (d.psi - mean) * (d.psi - mean);
    sq_err += (d.psi - truth) * (d.psi - truth);
    r.mean_se += d.se;
    r.coverage += d.lower <= truth && truth <= d.upper ? 1.0 : 0.0;
    r.ci_len += d.upper - d.lower;
  }
  r.bias = mean - truth;
  r.sd = draws.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
  r.mse = sq_err / m;
  r.mean_se /= m;
  r.coverage /= m;
  r.ci_len /= m;
  return r;
}

namespace {

bool is_federated(Method m) { return m == Method::FWMR1 || m == Method::FSMR1; }

}  // namespace

std::map<std::pair<std::string, std::string>, EstimateReport> run_replicate(
    const ScenarioSpec& spec, const MultiSiteData& data, const McOptions& options,
    std::uint64_t boot_seed) {
  const CausalMeasure measure(options.measure);
  const std::vector<int> all = data.site_ids();
  std::map<std::pair<std::string, std::string>, EstimateReport> out;

  FedConfig fc;
  fc.nuisance = options.nuisance;
  fc.measure = options.measure;
  fc.lambda_grid = options.lambda_grid;
  InProcessEstimator in(data, fc);

  std::optional<NuisanceBundle> full;
  std::optional<NuisanceBundle> target;
  for (const auto& type : spec.misspec) {
    const bool correct = type == "i";
    const MisspecSpec mis = correct ? MisspecSpec{} : misspec_preset(type);
    for (Method m : spec.estimators) {
      if (is_federated(m)) continue;
      EstimateReport r;
      if (correct && m != Method::MR2) {
        r = in.estimate(m == Method::DRt ? std::vector<int>{MultiSiteData::kTargetId} : all, -1);
        r.method = m;
      } else if (m == Method::DRt) {
        if (!target) target = fit_bundle(data, {MultiSiteData::kTargetId}, measure, options.nuisance);
        const NuisanceBundle b =
            correct ? *target
                    : apply_misspec(*target, data, mis.restricted_to({MultiSiteData::kTargetId}),
                                    options.nuisance);
        r = estimate_measure(data, b, m, measure);
      } else {
        if (!full) full = fit_bundle(data, all, measure, options.nuisance);
        const NuisanceBundle b =
            correct ? *full : apply_misspec(*full, data, mis.restricted_to(all), options.nuisance);
        r = estimate_measure(data, b, m, measure);
      }
      out[{to_string(m), type}] = r;
    }
  }

  const bool want_fw = std::count(spec.estimators.begin(), spec.estimators.end(), Method::FWMR1) > 0;
  const bool want_fs = std::count(spec.estimators.begin(), spec.estimators.end(), Method::FSMR1) > 0;
  if (want_fw || want_fs) {
    BootstrapPlan plan = options.bootstrap;
    plan.seed = boot_seed;
    const FwResult fw = in.fit_weights();
    ReplicateTable table(in, plan);
    const ThresholdGrid grid =
        options.thresholds.empty() ? ThresholdGrid::standard() : ThresholdGrid(options.thresholds);
    if (want_fs) out[{to_string(Method::FSMR1), "i"}] = estimate_fs(fw.weights.w, in, grid, table).report;
    if (want_fw) out[{to_string(Method::FWMR1), "i"}] = estimate_fw(fw, in, table);
  }
  return out;
}

McResult run_monte_carlo(const ScenarioSpec& spec, int M, std::uint64_t seed, const McOptions& options) {
  if (M < 2) throw Error(ErrorCode::ConfigError, "Monte Carlo needs M >= 2");
  spec.dgp.validate();
  for (Method m : spec.estimators) {
    if (is_federated(m) && (spec.misspec.size() != 1 || spec.misspec.front() != "i")) {
      throw Error(ErrorCode::ConfigError, "federated estimators run with correctly specified models only");
    }
  }
  McResult result;
  result.requested = M;
  result.truth = true_psi(spec.dgp, options.measure);

  using Reports = std::map<std::pair<std::string, std::string>, EstimateReport>;
  std::vector<std::optional<Reports>> per(static_cast<std::size_t>(M));
  std::vector<std::string> errors(static_cast<std::size_t>(M));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int r = next++; r < M; r = next++) {
      const auto ur = static_cast<std::uint64_t>(r);
      try {
        const MultiSiteData data = generate(spec.dgp, derive_seed(seed, {ur, 0}));
        per[static_cast<std::size_t>(r)] = run_replicate(spec, data, options, derive_seed(seed, {ur, 1}));
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(r)] = e.what();
      }
    }
  };
  const int threads = std::min(worker_threads(options.threads), M);
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  for (int r = 0; r < M; ++r) {
    const auto& reps = per[static_cast<std::size_t>(r)];
    if (!reps) {
      ++result.failures;
      result.failure_messages.push_back("replicate " + std::to_string(r) + ": " +
                                        errors[static_cast<std::size_t>(r)]);
      continue;
    }
    for (const auto& [key, rep] : *reps) {
      result.draws[key].push_back({rep.psi_hat, rep.se, rep.ci_lower, rep.ci_upper});
    }
  }
  for (const auto& type : spec.misspec) {
    for (Method m : spec.estimators) {
      const auto key = std::make_pair(std::string(to_string(m)), type);
      const auto it = result.draws.find(key);
      if (it == result.draws.end()) continue;
      MetricsRow row = summarize(it->second, result.truth.psi);
      row.scenario = spec.id;
      row.estimator = key.first;
      row.misspec = type;
      result.table.rows.push_back(row);
    }
  }
  return result;
}

namespace {

const char* kColumns[] = {"scenario", "estimator", "misspec", "bias", "sd",
                          "mean_se",  "mse",       "coverage", "ci_len", "M"};

}  // namespace

std::string format_table(const MetricsTable& table, TableFormat format) {
  std::ostringstream out;
  char buf[512];
  if (format == TableFormat::Csv) {
    for (int i = 0; i < 10; ++i) out << (i ? "," : "") << kColumns[i];
    out << '\n';
    for (const auto& r : table.rows) {
      std::snprintf(buf, sizeof buf, "%s,%s,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                    r.scenario.c_str(), r.estimator.c_str(), r.misspec.c_str(), r.bias, r.sd,
                    r.mean_se, r.mse, r.coverage, r.ci_len, r.M);
      out << buf;
    }
  } else {
    out << '|';
    for (const char* c : kColumns) out << ' ' << c << " |";
    out << "\n|";
    for (int i = 0; i < 10; ++i) out << (i < 3 ? "---|" : "---:|");
    out << '\n';
    for (const auto& r : table.rows) {
      std::snprintf(buf, sizeof buf, "| %s | %s | %s | %.4f | %.4f | %.4f | %.4f | %.3f | %.4f | %d |\n",
                    r.scenario.c_str(), r.estimator.c_str(), r.misspec.c_str(), r.bias, r.sd,
                    r.mean_se, r.mse, r.coverage, r.ci_len, r.M);
      out << buf;
    }
  }
  return out.str();
}

void emit_table(const MetricsTable& table, TableFormat format, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << format_table(table, format);
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

MetricsTable parse_table_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  MetricsTable t;
  if (!std::getline(in, line)) return t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw Error(ErrorCode::SchemaError, "metrics row needs 10 fields: " + line);
    MetricsRow r;
    r.scenario = f[0];
    r.estimator = f[1];
    r.misspec = f[2];
    r.bias = std::stod(f[3]);
    r.sd = std::stod(f[4]);
    r.mean_se = std::stod(f[5]);
    r.mse = std::stod(f[6]);
    r.coverage = std::stod(f[7]);
    r.ci_len = std::stod(f[8]);
    r.M = std::stoi(f[9]);
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace fedcausal
