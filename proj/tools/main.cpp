// fedcausal command line: simulate, estimate, fed-run, mse-curve.
//
// Exit codes: 0 ok, 2 too many failed replicates, 64 usage or configuration,
// 65 bad input data, 70 protocol or internal failure, 74 I/O failure.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedcausal/csv_io.hpp"
#include "fedcausal/montecarlo.hpp"
#include "fedcausal/pfws.hpp"
#include "fedcausal/serialize.hpp"

namespace fs = std::filesystem;
using namespace fedcausal;

namespace {

constexpr int kExitPartial = 2;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitSoftware = 70;
constexpr int kExitIo = 74;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::EmptyGrid:
    case ErrorCode::UnsupportedMeasureForMode:
    case ErrorCode::UnsupportedDgpForm:
      return kExitUsage;
    case ErrorCode::SchemaError:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::EmptyTreatmentArm:
    case ErrorCode::MissingTargetSite:
    case ErrorCode::NoTargetRows:
    case ErrorCode::SingleClassLabels:
    case ErrorCode::RankDeficient:
    case ErrorCode::DomainViolation:
      return kExitData;
    case ErrorCode::IoFailure:
      return kExitIo;
    default:
      return kExitSoftware;
  }
}

struct Common {
  std::string measure = "rr";
  std::string estimators = "dr-t,mr1,fwmr1,fsmr1";
  std::uint64_t seed = 1;
  int B = 200;
  std::string grid;
  std::string lambda_grid;
  std::string out = "results";
};

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, std::string("bad number '") + item + "' in " + what);
    }
  }
  return out;
}

std::vector<Method> parse_methods(const std::string& s) {
  std::vector<Method> out;
  for (const auto& item : split(s)) out.push_back(parse_method(item));
  if (out.empty()) throw Error(ErrorCode::ConfigError, "no estimators requested");
  return out;
}

void add_common(CLI::App* cmd, Common& c, bool estimators = true) {
  cmd->add_option("--measure", c.measure, "Causal measure")->check(CLI::IsMember({"rr", "rd"}))->capture_default_str();
  if (estimators) {
    cmd->add_option("--estimators", c.estimators, "Comma list of mr1, mr2, dr-t, fwmr1, fsmr1")
        ->capture_default_str();
  }
  cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  cmd->add_option("--B", c.B, "Bootstrap replicates")->capture_default_str();
  cmd->add_option("--grid", c.grid, "Comma list of selection thresholds in (0,1]");
  cmd->add_option("--lambda-grid", c.lambda_grid, "Comma list of penalty values");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

FedConfig fed_config(const Common& c) {
  FedConfig fc;
  fc.measure = parse_measure(c.measure);
  fc.lambda_grid = parse_doubles(c.lambda_grid, "--lambda-grid");
  fc.seed = c.seed;
  return fc;
}

RunOptions run_options(const Common& c) {
  RunOptions o;
  o.estimators = parse_methods(c.estimators);
  o.bootstrap.B = c.B;
  o.bootstrap.seed = c.seed;
  o.bootstrap.validate();
  o.thresholds = parse_doubles(c.grid, "--grid");
  if (!o.thresholds.empty()) ThresholdGrid check(o.thresholds);
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::string file_tag(Method m) {
  std::string s = to_string(m);
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

struct ForestRow {
  std::string label;
  Eigen::Index n = 0;
  double psi = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

std::string forest_csv(const std::vector<ForestRow>& rows) {
  std::ostringstream out;
  out << "label,n,psi,se,lower,upper\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%.17g,%.17g,%.17g,%.17g\n", r.label.c_str(),
                  static_cast<long long>(r.n), r.psi, r.se, r.lower, r.upper);
    out << buf;
  }
  return out.str();
}

void print_forest(const std::vector<ForestRow>& rows) {
  std::printf("%-14s %7s %9s %9s  %s\n", "", "n", "estimate", "se", "95% CI");
  for (const auto& r : rows) {
    std::printf("%-14s %7lld %9.4f %9.4f  [%.4f, %.4f]\n", r.label.c_str(),
                static_cast<long long>(r.n), r.psi, r.se, r.lower, r.upper);
  }
}

ForestRow forest_row(const std::string& label, const EstimateReport& r) {
  return {label, r.n_used, r.psi_hat, r.se, r.ci_lower, r.ci_upper};
}

/// Per-site AIPW estimates, each site taken as its own target.
std::vector<ForestRow> site_rows(const MultiSiteData& data, MeasureKind measure) {
  std::vector<ForestRow> rows;
  for (const auto& [k, site] : data.sites()) {
    const SiteDataset alone(MultiSiteData::kTargetId, site.y(), site.x(), site.a());
    const MultiSiteData one(std::vector<SiteDataset>{alone});
    rows.push_back(forest_row("site " + std::to_string(k), estimate_dr_t(one, CausalMeasure(measure))));
  }
  return rows;
}

void write_reports(const RunResult& run, const fs::path& out) {
  for (const auto& r : run.reports) write_json(to_json(r), out / (file_tag(r.method) + ".json"));
  if (run.selection) write_text(out / "mse_curve.csv", run.selection->curve.to_csv());
}

MultiSiteData read_sites(const std::string& target, const std::string& sources) {
  std::vector<SiteDataset> sites{read_site_csv(target, MultiSiteData::kTargetId)};
  int k = 1;
  for (const auto& p : split(sources)) sites.push_back(read_site_csv(p, k++));
  return MultiSiteData(std::move(sites));
}

int cmd_simulate(const std::string& scenario_arg, int M, long long n, const Common& c) {
  ScenarioSpec spec = fs::exists(scenario_arg) ? load_scenario(scenario_arg) : scenario(scenario_arg);
  if (n > 0) spec.dgp.n_total = n;
  if (!c.estimators.empty()) spec.estimators = parse_methods(c.estimators);
  McOptions o;
  o.measure = parse_measure(c.measure);
  o.bootstrap.B = c.B;
  o.thresholds = parse_doubles(c.grid, "--grid");
  o.lambda_grid = parse_doubles(c.lambda_grid, "--lambda-grid");
  const McResult r = run_monte_carlo(spec, M, c.seed, o);
  const fs::path dir = fs::path(c.out) / spec.id;
  emit_table(r.table, TableFormat::Csv, dir / "metrics.csv");
  emit_table(r.table, TableFormat::Markdown, dir / "metrics.md");
  std::string failures;
  for (const auto& m : r.failure_messages) failures += m + "\n";
  write_text(dir / "failures.txt", failures);
  const std::string csv = format_table(r.table, TableFormat::Csv);
  std::cout << format_table(r.table, TableFormat::Markdown);
  std::cout << "truth " << r.truth.psi << ", failed replicates " << r.failures << "/" << M
            << ", digest " << fnv1a_hex(csv) << "\n";
  return r.failures * 100 > M ? kExitPartial : 0;
}

int cmd_estimate(const std::string& target, const std::string& sources, const Common& c) {
  const MultiSiteData data = read_sites(target, sources);
  validate_multisite(data);
  const FedConfig fc = fed_config(c);
  InProcessEstimator est(data, fc);
  const RunResult run = run_estimators(est, run_options(c), &data, fc.nuisance);
  const fs::path out(c.out);
  write_reports(run, out);
  std::vector<ForestRow> rows = site_rows(data, fc.measure);
  for (const auto& r : run.reports) rows.push_back(forest_row(to_string(r.method), r));
  write_text(out / "forest.csv", forest_csv(rows));
  print_forest(rows);
  return 0;
}

fs::path site_file(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::ProtocolViolation, "site directory " + dir.string() + " does not exist");
  }
  if (fs::exists(dir / "data.csv")) return dir / "data.csv";
  std::vector<fs::path> csv;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") csv.push_back(e.path());
  }
  if (csv.size() != 1) {
    throw Error(ErrorCode::ProtocolViolation, dir.string() + " must hold data.csv or exactly one CSV file");
  }
  return csv.front();
}

int cmd_fed_run(const std::string& target, const std::string& sources, const std::string& transport_kind,
                const Common& c) {
  std::vector<std::string> dirs{target};
  for (const auto& s : split(sources)) dirs.push_back(s);
  const FedConfig fc = fed_config(c);
  std::vector<SiteNode> nodes;
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    nodes.emplace_back(read_site_csv(site_file(dirs[k]), static_cast<int>(k)), fc.nuisance);
  }
  const fs::path out(c.out);
  std::unique_ptr<Transport> transport;
  if (transport_kind == "files") {
    std::error_code ec;
    fs::remove_all(out / "transport", ec);
    transport = std::make_unique<FileTransport>(out / "transport");
  } else {
    transport = std::make_unique<MemoryTransport>();
  }
  Federation fed(*transport, nodes, fc);
  FederatedEstimator est(fed);
  RunOptions options = run_options(c);
  for (Method m : options.estimators) {
    if (m == Method::MR2) throw Error(ErrorCode::ConfigError, "MR2 needs pooled rows and is not federated");
  }
  const RunResult run = run_estimators(est, options);
  write_reports(run, out);

  const auto transcript = transport->transcript();
  std::ofstream log(out / "transcript.jsonl");
  for (const auto& m : transcript) log << m.to_json().dump() << '\n';
  if (!log) throw Error(ErrorCode::IoFailure, "cannot write transcript");
  const auto issues = privacy_audit(transcript);
  std::string audit;
  for (const auto& i : issues) audit += i + "\n";
  write_text(out / "privacy_audit.txt", issues.empty() ? "ok\n" : audit);

  std::vector<ForestRow> rows;
  for (const auto& r : run.reports) rows.push_back(forest_row(to_string(r.method), r));
  write_text(out / "forest.csv", forest_csv(rows));
  print_forest(rows);
  std::cout << fed.rounds() << " rounds, " << transcript.size() << " messages, privacy audit "
            << (issues.empty() ? "passed" : "FAILED") << "\n";
  if (!issues.empty()) {
    std::cerr << audit;
    return kExitSoftware;
  }
  return 0;
}

int cmd_mse_curve(const std::string& target, const std::string& sources, const Common& c) {
  const MultiSiteData data = read_sites(target, sources);
  validate_multisite(data);
  InProcessEstimator est(data, fed_config(c));
  RunOptions options = run_options(c);
  options.estimators = {Method::FSMR1};
  const RunResult run = run_estimators(est, options);
  const fs::path out(c.out);
  write_text(out / "mse_curve.csv", run.selection->curve.to_csv());
  write_json(to_json(run.selection->report), out / "fsmr1.json");
  std::cout << run.selection->curve.to_csv();
  std::cout << "e* = " << run.selection->e_star << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-site causal effect estimation with federated site weighting"};
  app.require_subcommand(1);

  Common sim_c;
  sim_c.estimators.clear();
  std::string scenario_arg;
  int M = 500;
  long long n = 0;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo study of a built-in or JSON scenario");
  sim->add_option("--scenario", scenario_arg, "Scenario id (1.1, 1.2, 2.1, 2.2, 2.3) or JSON file")->required();
  sim->add_option("--M", M, "Replications")->capture_default_str();
  sim->add_option("--n", n, "Total sample size (default from the scenario)");
  add_common(sim, sim_c);

  Common est_c;
  std::string est_target, est_sources;
  auto* est = app.add_subcommand("estimate", "Estimate on per-site CSV files (y,a,x1..xp)");
  est->add_option("--target", est_target, "Target site CSV")->required();
  est->add_option("--sources", est_sources, "Comma list of source site CSVs");
  add_common(est, est_c);

  Common fed_c;
  std::string fed_target, fed_sources, transport = "files";
  auto* fed = app.add_subcommand("fed-run", "Run the federation protocol over per-site directories");
  fed->add_option("--target", fed_target, "Target site directory")->required();
  fed->add_option("--sources", fed_sources, "Comma list of source site directories");
  fed->add_option("--transport", transport, "Message transport")
      ->check(CLI::IsMember({"memory", "files"}))
      ->capture_default_str();
  add_common(fed, fed_c);

  Common mse_c;
  std::string mse_target, mse_sources;
  auto* mse = app.add_subcommand("mse-curve", "Bootstrap MSE curve over selection thresholds");
  mse->add_option("--target", mse_target, "Target site CSV")->required();
  mse->add_option("--sources", mse_sources, "Comma list of source site CSVs");
  add_common(mse, mse_c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(scenario_arg, M, n, sim_c);
    if (*est) return cmd_estimate(est_target, est_sources, est_c);
    if (*fed) return cmd_fed_run(fed_target, fed_sources, transport, fed_c);
    if (*mse) return cmd_mse_curve(mse_target, mse_sources, mse_c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSoftware;
  }
  return kExitSoftware;
}
