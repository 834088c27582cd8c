#include <doctest.h>

#include <filesystem>
#include <random>

#include "fedcausal/federation.hpp"
#include "fedcausal/sim.hpp"

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

FedConfig small_config() {
  FedConfig c;
  c.lambda_grid = {0.0, 1.0, 5.0};
  return c;
}

GramSums random_gram(std::mt19937_64& eng, Eigen::Index k) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(k + 1, k + 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = z(eng);
  return gram_from_sums(a * a.transpose(), 1);
}

}  // namespace

TEST_CASE("federated MR1 matches the pooled computation") {
  const MultiSiteData d = generate(DgpParams{}, 11);
  MemoryTransport t;
  auto nodes = make_nodes(d);
  Federation fed(t, nodes, small_config());
  for (const std::vector<int>& sites : {std::vector<int>{0}, {0, 1}, {0, 1, 2}}) {
    const EstimateReport f = fed.estimate_set(sites);
    const EstimateReport p = sites.size() == 1 ? estimate_dr_t(d, risk_ratio())
                                               : estimate_measure(d, sites, Method::MR1, risk_ratio());
    CHECK(f.psi_hat == doctest::Approx(p.psi_hat).epsilon(1e-12));
    CHECK(f.se == doctest::Approx(p.se).epsilon(1e-10));
  }
  CHECK(privacy_audit(t.transcript()).empty());
}

TEST_CASE("file and memory transports give identical results") {
  const MultiSiteData d = generate(DgpParams{}, 12);
  const auto dir = std::filesystem::temp_directory_path() / "fedcausal_fed_files";
  std::filesystem::remove_all(dir);

  MemoryTransport mt;
  auto mem_nodes = make_nodes(d);
  Federation mem(mt, mem_nodes, small_config());
  FileTransport ft(dir);
  auto file_nodes = make_nodes(d);
  Federation files(ft, file_nodes, small_config());

  const FwResult a = mem.fit_weights();
  const FwResult b = files.fit_weights();
  CHECK(a.weights.w == b.weights.w);
  CHECK(a.weights.lambda == b.weights.lambda);
  CHECK(a.gram.G == b.gram.G);
  CHECK(mem.estimate_set({0, 2}).psi_hat == files.estimate_set({0, 2}).psi_hat);

  const auto on_disk = read_transcript(ft.outbox());
  CHECK(on_disk.size() == mt.transcript().size());
  CHECK(privacy_audit(on_disk).empty());
  CHECK(std::filesystem::exists(ft.outbox() / FileTransport::file_name(1, kCoordinator, "local_models")));
}

TEST_CASE("federated weights lie on the simplex") {
  const MultiSiteData d = generate(DgpParams{}, 13);
  MemoryTransport t;
  auto nodes = make_nodes(d);
  Federation fed(t, nodes, small_config());
  const FwResult r = fed.fit_weights();
  CHECK(r.weights.w.size() == 3);
  CHECK(r.weights.w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.weights.w.minCoeff() >= 0.0);
  CHECK(r.pairs.size() == 3);
}

TEST_CASE("privacy audit flags row-sized arrays and unknown fields") {
  Message m;
  m.round = 3;
  m.origin = 1;
  m.kind = "contribution";
  m.payload = {{"site", 1}, {"n", 100}, {"psi1_sum", 1.0}, {"psi0_sum", 0.0}, {"fallback_rows", 0}};
  CHECK(privacy_audit({m}).empty());
  m.payload["psi1_sum"] = std::vector<double>(100, 0.5);
  CHECK(privacy_audit({m}).size() == 1);
  m.payload["psi1_sum"] = 1.0;
  m.payload["y"] = 2.0;
  CHECK(privacy_audit({m}).size() == 1);
  m.kind = "rows";
  CHECK(privacy_audit({m}).size() == 1);
}

TEST_CASE("protocol violations") {
  const MultiSiteData d = generate(DgpParams{}, 14);
  auto nodes = make_nodes(d);
  MemoryTransport t;
  Message req;
  req.round = 1;
  req.kind = "local_models";
  req.payload = {{"recipients", {0, 2}}, {"measure", "rr"}, {"replicate", -1}};
  t.send(req);
  CHECK(code_of([&] { nodes[1].serve(t, 1, "local_models"); }) == ErrorCode::ProtocolViolation);
  CHECK(code_of([&] { t.fetch(2, kCoordinator, "local_models"); }) == ErrorCode::ProtocolViolation);
  req.kind = "rows";
  req.payload["recipients"] = {0};
  CHECK(code_of([&] { nodes[0].handle(req); }) == ErrorCode::ProtocolViolation);
  std::vector<SiteNode> no_target{nodes[1], nodes[2]};
  CHECK(code_of([&] { Federation(t, no_target, FedConfig{}); }) == ErrorCode::MissingTargetSite);
}

TEST_CASE("simplex projection") {
  Eigen::VectorXd v(3);
  v << 0.2, 0.3, 0.5;
  CHECK(project_simplex(v) == v);
  v << 2.0, 0.0, 0.0;
  CHECK(project_simplex(v) == Eigen::Vector3d(1, 0, 0));
  v << 0.5, 0.5, -3.0;
  CHECK(project_simplex(v).isApprox(Eigen::Vector3d(0.5, 0.5, 0.0)));

  // Optimality: the projection is at least as close as any other simplex point.
  std::mt19937_64 eng(5);
  std::normal_distribution<double> z;
  std::exponential_distribution<double> e;
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd u(4), s(4);
    for (int i = 0; i < 4; ++i) {
      u[i] = z(eng);
      s[i] = e(eng);
    }
    s /= s.sum();
    const Eigen::VectorXd p = project_simplex(u);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p.minCoeff() >= 0.0);
    CHECK((u - p).norm() <= (u - s).norm() + 1e-12);
  }
}

TEST_CASE("weight solver reaches the grid minimum") {
  std::mt19937_64 eng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const GramSums g = random_gram(eng, 2);
    const Eigen::Vector2d delta2(u(eng), u(eng));
    const double lambda = 2.0 * u(eng);
    const FederatedWeights w = solve_weights(g, delta2, lambda);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 400; ++i) {
      for (int j = 0; i + j <= 400; ++j) {
        const Eigen::Vector3d c(1.0 - (i + j) / 400.0, i / 400.0, j / 400.0);
        best = std::min(best, penalized_objective(g, delta2, lambda, c));
      }
    }
    CHECK(w.converged);
    CHECK(w.objective <= best + 1e-9);
    CHECK(w.objective == doctest::Approx(penalized_objective(g, delta2, lambda, w.w)));
  }
}

TEST_CASE("lambda selection") {
  std::mt19937_64 eng(7);
  const std::vector<GramSums> train{random_gram(eng, 2), random_gram(eng, 2)};
  const std::vector<GramSums> held{random_gram(eng, 2), random_gram(eng, 2)};
  const Eigen::Vector2d delta2(0.1, 0.4);
  CHECK(code_of([&] { select_lambda(train, held, delta2, {}); }) == ErrorCode::EmptyGrid);
  const double l = select_lambda(train, held, delta2, {0.0, 1.0, 10.0});
  CHECK((l == 0.0 || l == 1.0 || l == 10.0));
  const auto grid = default_lambda_grid(1000);
  CHECK(grid.size() == 4);
  CHECK(grid[0] == 0.0);
  CHECK(grid[1] == doctest::Approx(std::pow(1000.0, 0.3)));
}

TEST_CASE("Gram partials are sums over rows and folds") {
  std::mt19937_64 eng(8);
  std::normal_distribution<double> z;
  SiteContribution a, b;
  a.psi1.resize(50);
  b.psi1.resize(50);
  for (int i = 0; i < 50; ++i) {
    a.psi1[i] = z(eng);
    b.psi1[i] = z(eng);
  }
  a.psi0 = b.psi0 = Eigen::VectorXd::Zero(50);
  const double psi1 = 0.3, p0 = 0.25;
  const GramPartial g = site_gram_partial(0, {&a, nullptr, &b}, psi1, p0, 5, 99);
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(50, 3);
  phi.col(0) = (a.psi1.array() - psi1) / p0;
  phi.col(2) = (b.psi1.array() - psi1) / p0;
  CHECK((g.full - phi.transpose() * phi).cwiseAbs().maxCoeff() < 1e-10);
  Eigen::MatrixXd folds = Eigen::MatrixXd::Zero(3, 3);
  Eigen::Index n = 0;
  for (std::size_t f = 0; f < g.folds.size(); ++f) {
    folds += g.folds[f];
    n += g.fold_n[f];
    CHECK(g.fold_n[f] == 10);
  }
  CHECK(n == 50);
  CHECK((folds - g.full).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(code_of([&] { site_gram_partial(0, {&a}, psi1, p0, 1, 99); }) == ErrorCode::ConfigError);

  GramPartial sum = g;
  sum += site_gram_partial(1, {nullptr, &a, nullptr}, psi1, p0, 5, 99);
  CHECK(sum.n == 100);
}
