#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fedcausal/montecarlo.hpp"

using namespace fedcausal;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

MetricsTable sample_table() {
  MetricsTable t;
  t.rows.push_back({"1.1", "MR1", "i", 0.01, 0.2, 0.19, 0.0401, 0.95, 0.8, 500});
  t.rows.push_back({"1.1", "DR-t", "ii", -0.125, 1.0 / 3.0, 0.3, 0.12, 0.93, 1.2, 499});
  return t;
}

}  // namespace

TEST_CASE("metric summaries satisfy the MSE identity") {
  std::mt19937_64 eng(1);
  std::normal_distribution<double> z(2.6, 0.3);
  std::vector<Draw> draws;
  for (int i = 0; i < 137; ++i) {
    const double psi = z(eng);
    draws.push_back({psi, 0.3, psi - 0.5, psi + 0.5});
  }
  const MetricsRow r = summarize(draws, 2.5);
  const double m = double(r.M);
  CHECK(std::abs(r.mse - (r.bias * r.bias + r.sd * r.sd * (m - 1.0) / m)) < 1e-10);
  CHECK(r.mean_se == doctest::Approx(0.3));
  CHECK(r.ci_len == doctest::Approx(1.0));
  int covered = 0;
  for (const auto& d : draws) covered += d.lower <= 2.5 && 2.5 <= d.upper;
  CHECK(r.coverage == doctest::Approx(covered / m));
}

TEST_CASE("tables round-trip through CSV") {
  const MetricsTable t = sample_table();
  const std::string csv = format_table(t, TableFormat::Csv);
  CHECK(csv.rfind("scenario,estimator,misspec,bias,sd,mean_se,mse,coverage,ci_len,M\n", 0) == 0);
  const MetricsTable back = parse_table_csv(csv);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[1].sd == t.rows[1].sd);
  CHECK(back.rows[1].estimator == "DR-t");
  CHECK(back.rows[1].M == 499);
  CHECK(format_table(back, TableFormat::Csv) == csv);
  CHECK(&back.find("DR-t", "ii") == &back.rows[1]);
  CHECK(code_of([&] { back.find("MR2"); }) != ErrorCode::IoFailure);
}

TEST_CASE("markdown has one line per row") {
  const std::string md = format_table(sample_table(), TableFormat::Markdown);
  std::istringstream in(md);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) lines += line.empty() ? 0 : 1;
  CHECK(lines == 2 + 2);
  CHECK(md.find("| DR-t |") != std::string::npos);
}

TEST_CASE("an empty table is header only") {
  const auto path = std::filesystem::temp_directory_path() / "fedcausal_mc" / "empty.csv";
  emit_table(MetricsTable{}, TableFormat::Csv, path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "scenario,estimator,misspec,bias,sd,mean_se,mse,coverage,ci_len,M\n");
}

TEST_CASE("Monte Carlo runs are reproducible and thread independent") {
  ScenarioSpec spec = scenario("1.1");
  spec.dgp.n_total = 400;
  spec.estimators = {Method::DRt, Method::MR1, Method::MR2};
  spec.misspec = {"i", "iv"};
  McOptions one;
  one.threads = 1;
  McOptions four;
  four.threads = 4;
  const McResult a = run_monte_carlo(spec, 6, 42, one);
  const McResult b = run_monte_carlo(spec, 6, 42, four);
  CHECK(format_table(a.table, TableFormat::Csv) == format_table(b.table, TableFormat::Csv));
  CHECK(a.table.rows.size() == 6);
  CHECK(a.requested == 6);
  CHECK(a.truth.psi == doctest::Approx(2.5));
  const MetricsRow& mr1 = a.table.find("MR1");
  CHECK(mr1.M + a.failures == 6);
  CHECK(std::abs(mr1.mse - (mr1.bias * mr1.bias + mr1.sd * mr1.sd * (mr1.M - 1.0) / mr1.M)) < 1e-10);
  CHECK(format_table(run_monte_carlo(spec, 6, 43, one).table, TableFormat::Csv) !=
        format_table(a.table, TableFormat::Csv));
}

TEST_CASE("Monte Carlo configuration errors") {
  ScenarioSpec spec = scenario("1.1");
  CHECK(code_of([&] { run_monte_carlo(spec, 1, 1); }) == ErrorCode::ConfigError);
  spec.estimators = {Method::FSMR1};
  spec.misspec = {"i", "ii"};
  CHECK(code_of([&] { run_monte_carlo(spec, 2, 1); }) == ErrorCode::ConfigError);
}

TEST_CASE("thread count honours the environment") {
  CHECK(worker_threads(3) == 3);
  CHECK(worker_threads() >= 1);
}
