#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "fedcausal/core.hpp"
#include "fedcausal/csv_io.hpp"

using namespace fedcausal;

namespace {

SiteDataset small_site(int id, Eigen::Index n, unsigned seed = 1) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> z;
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXi a(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = z(eng);
    x(i, 1) = z(eng);
    a[i] = static_cast<int>(i % 2);
    y[i] = x(i, 0) + a[i] + z(eng);
  }
  return SiteDataset(id, y, x, a);
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("risk ratio and difference") {
  const auto rr = risk_ratio();
  const auto rd = risk_difference();
  CHECK(rr.apply(2.0, 5.0) == doctest::Approx(2.5));
  CHECK(rd.apply(2.0, 5.0) == doctest::Approx(3.0));
  CHECK(rr.g(2.0, 6.0) == doctest::Approx(3.0));
  CHECK(rr.g_inverse(2.0, 3.0) == doctest::Approx(6.0));
  CHECK(rd.g_inverse(2.0, 3.0) == doctest::Approx(5.0));
  CHECK(code_of([&] { rr.apply(0.0, 1.0); }) == ErrorCode::DomainViolation);
  CHECK(code_of([&] { rr.apply(1e-12, 1.0); }) == ErrorCode::DomainViolation);
  CHECK_NOTHROW(rd.apply(0.0, 1.0));
}

TEST_CASE("eif_combine matches a finite-difference derivative of the measure") {
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> u(0.5, 3.0);
  std::normal_distribution<double> z;
  for (const auto& m : {risk_ratio(), risk_difference()}) {
    for (int rep = 0; rep < 50; ++rep) {
      const double p0 = u(eng), p1 = u(eng), d0 = z(eng), d1 = z(eng);
      const double h = 1e-6;
      const double fd = (m.apply(p0 + h * d0, p1 + h * d1) - m.apply(p0 - h * d0, p1 - h * d1)) / (2 * h);
      CHECK(m.eif_combine(p0, p1, d0, d1) == doctest::Approx(fd).epsilon(1e-7));
    }
  }
}

TEST_CASE("pairwise_sum is accurate and order fixed") {
  std::vector<double> v(10001);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / static_cast<double>(i + 1);
  long double ref = 0.0L;
  for (double x : v) ref += x;
  CHECK(pairwise_sum(v) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-15));
  CHECK(pairwise_sum(v) == pairwise_sum(v));
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
}

TEST_CASE("Wald interval") {
  EstimateReport r;
  r.psi_hat = 1.0;
  set_wald_interval(r, 0.5);
  CHECK(r.ci_lower == doctest::Approx(1.0 - 1.959964 * 0.5));
  CHECK(r.ci_upper == doctest::Approx(1.0 + 1.959964 * 0.5));
  CHECK(r.covers(1.5));
  CHECK_FALSE(r.covers(2.1));
}

TEST_CASE("site dataset validation") {
  Eigen::VectorXd y(3);
  y << 1, 2, 3;
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 2;
  Eigen::VectorXi a(3);
  a << 0, 1, 2;
  CHECK(code_of([&] { SiteDataset(0, y, x, a); }) == ErrorCode::PreconditionViolation);
  a << 0, 1, 1;
  CHECK(code_of([&] { SiteDataset(0, y, Eigen::MatrixXd(2, 1), a); }) == ErrorCode::DimensionMismatch);
  y[1] = std::nan("");
  CHECK(code_of([&] { SiteDataset(0, y, x, a); }) == ErrorCode::PreconditionViolation);

  const SiteDataset s = small_site(2, 10);
  CHECK(s.count_arm(1) == 5);
  const std::vector<Eigen::Index> rows{0, 0, 3};
  const SiteDataset t = s.take(rows);
  CHECK(t.n() == 3);
  CHECK(t.y()[1] == s.y()[0]);
  CHECK(t.site_id() == 2);
}

TEST_CASE("multi-site validation") {
  CHECK(code_of([] { MultiSiteData({small_site(0, 6), SiteDataset(1, Eigen::VectorXd::Ones(2), Eigen::MatrixXd::Ones(2, 3), Eigen::VectorXi::Ones(2))}); }) ==
        ErrorCode::DimensionMismatch);
  const MultiSiteData no_target({small_site(1, 6)});
  CHECK(code_of([&] { validate_multisite(no_target); }) == ErrorCode::MissingTargetSite);

  Eigen::VectorXi treated = Eigen::VectorXi::Ones(4);
  const MultiSiteData one_arm({small_site(0, 6), SiteDataset(1, Eigen::VectorXd::Ones(4), Eigen::MatrixXd::Ones(4, 2), treated)});
  try {
    validate_multisite(one_arm);
    FAIL("expected EmptyTreatmentArm");
  } catch (const EmptyTreatmentArmError& e) {
    CHECK(e.site() == 1);
    CHECK(e.arm() == 0);
  }
  const MultiSiteData ok({small_site(0, 6), small_site(3, 8)});
  const ValidationReport rep = validate_multisite(ok);
  CHECK(rep.counts.size() == 2);
  CHECK(rep.p == 2);
  CHECK(ok.n_total() == 14);
}

TEST_CASE("CSV round trip and schema diagnostics") {
  const auto dir = std::filesystem::temp_directory_path() / "fedcausal_core_csv";
  std::filesystem::remove_all(dir);
  const MultiSiteData data({small_site(0, 7, 5), small_site(1, 9, 6)});
  write_multisite_csv(data, dir);
  const SiteDataset back = read_site_csv(dir / "site_1.csv");
  CHECK(back.site_id() == 1);
  CHECK(back.y() == data.site(1).y());
  CHECK(back.x() == data.site(1).x());
  CHECK(back.a() == data.site(1).a());
  CHECK(site_id_from_filename("site_12.csv") == 12);
  CHECK_FALSE(site_id_from_filename("other.csv").has_value());

  std::ofstream(dir / "bad_header.csv") << "y,treat,x1\n1,0,2\n";
  try {
    read_site_csv(dir / "bad_header.csv", 0);
    FAIL("expected SchemaError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaError);
    CHECK(std::string(e.what()).find("treat") != std::string::npos);
  }
  std::ofstream(dir / "bad_cell.csv") << "y,a,x1\n1,0,2\n1,1,abc\n";
  try {
    read_site_csv(dir / "bad_cell.csv", 0);
    FAIL("expected SchemaError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaError);
    CHECK(std::string(e.what()).find("x1") != std::string::npos);
  }
  CHECK(code_of([&] { read_site_csv(dir / "missing.csv", 0); }) == ErrorCode::IoFailure);
}

TEST_CASE("name parsing") {
  CHECK(parse_measure("rr") == MeasureKind::RiskRatio);
  CHECK(parse_measure("RD") == MeasureKind::RiskDifference);
  CHECK(parse_method("DR-t") == Method::DRt);
  CHECK(parse_method("fsmr1") == Method::FSMR1);
  CHECK(code_of([] { parse_method("mr3"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_measure("or"); }) == ErrorCode::ConfigError);
}
