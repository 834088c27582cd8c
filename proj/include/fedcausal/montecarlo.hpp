#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedcausal/pfws.hpp"
#include "fedcausal/sim.hpp"

namespace fedcausal {

struct McOptions {
  MeasureKind measure = MeasureKind::RiskRatio;
  NuisanceConfig nuisance;
  // Bootstrap plan for FWMR1 / FSMR1; its seed is replaced per replicate.
  BootstrapPlan bootstrap;
  std::vector<double> thresholds;   // empty: standard grid
  std::vector<double> lambda_grid;  // empty: default grid
  // 0: FEDCAUSAL_THREADS, else hardware concurrency.
  int threads = 0;
};

/// One estimator's output on one replicate.
struct Draw {
  double psi = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct MetricsRow {
  std::string scenario;
  std::string estimator;
  std::string misspec;
  double bias = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
  double ci_len = 0.0;
  int M = 0;
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  const MetricsRow& find(const std::string& estimator, const std::string& misspec = "i") const;
};

struct McResult {
  MetricsTable table;
  TrueValues truth;
  // Keyed by (estimator, misspec); one entry per successful replicate.
  std::map<std::pair<std::string, std::string>, std::vector<Draw>> draws;
  int requested = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
};

/// Worker count from FEDCAUSAL_THREADS, falling back to the hardware count.
int worker_threads(int requested = 0);

/// Summary of the draws against `truth`.
MetricsRow summarize(const std::vector<Draw>& draws, double truth);

/// Reports of every (estimator, misspec) pair of the scenario on one data set.
std::map<std::pair<std::string, std::string>, EstimateReport> run_replicate(
    const ScenarioSpec& spec, const MultiSiteData& data, const McOptions& options,
    std::uint64_t boot_seed);

/// M independent replicates with seeds derived from `seed`. A replicate in
/// which any estimator throws is excluded and counted as a failure.
McResult run_monte_carlo(const ScenarioSpec& spec, int M, std::uint64_t seed,
                         const McOptions& options = {});

enum class TableFormat { Csv, Markdown };

/// Columns scenario, estimator, misspec, bias, sd, mean_se, mse, coverage, ci_len, M.
std::string format_table(const MetricsTable& table, TableFormat format);
void emit_table(const MetricsTable& table, TableFormat format, const std::filesystem::path& path);
MetricsTable parse_table_csv(const std::string& text);

}  // namespace fedcausal
