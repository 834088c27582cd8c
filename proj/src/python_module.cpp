#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <optional>

#include "fedcausal/montecarlo.hpp"
#include "fedcausal/serialize.hpp"

namespace py = pybind11;
using namespace fedcausal;

namespace {

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

// {site_id: (y, a, x)} with x of shape (n, p).
MultiSiteData to_data(const py::dict& sites) {
  std::vector<SiteDataset> out;
  for (const auto& [key, value] : sites) {
    const auto t = value.cast<py::tuple>();
    if (t.size() != 3) throw Error(ErrorCode::SchemaError, "each site must be a (y, a, x) tuple");
    out.emplace_back(key.cast<int>(), t[0].cast<Eigen::VectorXd>(), t[2].cast<Eigen::MatrixXd>(),
                     t[1].cast<Eigen::VectorXi>());
  }
  return MultiSiteData(std::move(out));
}

py::dict from_data(const MultiSiteData& data) {
  py::dict d;
  for (const auto& [k, s] : data.sites()) d[py::int_(k)] = py::make_tuple(s.y(), s.a(), s.x());
  return d;
}

std::vector<Method> methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) out.push_back(parse_method(n));
  return out;
}

ScenarioSpec resolve_scenario(const std::string& id_or_path) {
  if (std::filesystem::exists(id_or_path)) return load_scenario(id_or_path);
  return scenario(id_or_path);
}

py::dict true_values(const std::string& id, const std::string& measure) {
  const TrueValues t = true_psi(resolve_scenario(id).dgp, parse_measure(measure));
  py::dict d;
  d["psi0"] = t.psi0;
  d["psi1"] = t.psi1;
  d["psi"] = t.psi;
  return d;
}

py::dict generate_sites(const std::string& id, std::uint64_t seed, std::optional<long long> n) {
  DgpParams p = resolve_scenario(id).dgp;
  if (n) p.n_total = *n;
  return from_data(generate(p, seed));
}

py::object estimate(const py::dict& sites, const std::string& method, const std::string& measure,
                    std::optional<std::vector<int>> site_ids) {
  const MultiSiteData data = to_data(sites);
  const CausalMeasure m(parse_measure(measure));
  const Method which = parse_method(method);
  EstimateReport r;
  {
    py::gil_scoped_release unlock;
    if (which == Method::DRt) {
      r = estimate_dr_t(data, m);
    } else if (which == Method::MR1 || which == Method::MR2) {
      r = estimate_measure(data, site_ids.value_or(data.site_ids()), which, m);
    } else {
      throw Error(ErrorCode::ConfigError, "use run() for the federated estimators");
    }
  }
  return to_py(to_json(r));
}

py::dict run(const py::dict& sites, const std::vector<std::string>& estimators, const std::string& measure,
             int B, std::uint64_t seed, const std::vector<double>& thresholds,
             const std::vector<double>& lambda_grid, const std::string& transport,
             std::optional<std::string> directory) {
  const MultiSiteData data = to_data(sites);
  FedConfig cfg;
  cfg.measure = parse_measure(measure);
  cfg.lambda_grid = lambda_grid;
  cfg.seed = seed;
  RunOptions opt;
  opt.estimators = methods(estimators);
  opt.bootstrap.B = B;
  opt.bootstrap.seed = seed;
  opt.thresholds = thresholds;

  RunResult res;
  std::vector<Message> transcript;
  {
    py::gil_scoped_release unlock;
    if (transport == "inprocess") {
      InProcessEstimator est(data, cfg);
      res = run_estimators(est, opt, &data, cfg.nuisance);
    } else {
      std::unique_ptr<Transport> t;
      if (transport == "memory") {
        t = std::make_unique<MemoryTransport>();
      } else if (transport == "files") {
        if (!directory) throw Error(ErrorCode::ConfigError, "the files transport needs a directory");
        t = std::make_unique<FileTransport>(*directory);
      } else {
        throw Error(ErrorCode::ConfigError, "transport must be inprocess, memory or files");
      }
      auto nodes = make_nodes(data, cfg.nuisance);
      Federation fed(*t, nodes, cfg);
      FederatedEstimator est(fed);
      res = run_estimators(est, opt, &data, cfg.nuisance);
      transcript = t->transcript();
    }
  }

  py::dict out;
  py::list reports;
  for (const auto& r : res.reports) reports.append(to_py(to_json(r)));
  out["reports"] = reports;
  if (res.weights) {
    out["weights"] = res.weights->weights.w;
    out["lambda"] = res.weights->weights.lambda;
  }
  if (res.selection) {
    out["e_star"] = res.selection->e_star;
    out["mse_curve"] = res.selection->curve.to_csv();
  }
  if (transport != "inprocess") {
    out["messages"] = transcript.size();
    out["privacy_findings"] = privacy_audit(transcript);
  }
  return out;
}

py::list monte_carlo(const std::string& id, int M, std::uint64_t seed, std::optional<long long> n,
                     std::optional<std::vector<std::string>> estimators,
                     std::optional<std::vector<std::string>> misspec, int B) {
  ScenarioSpec spec = resolve_scenario(id);
  if (n) spec.dgp.n_total = *n;
  if (estimators) spec.estimators = methods(*estimators);
  if (misspec) spec.misspec = *misspec;
  McOptions opt;
  opt.bootstrap.B = B;
  McResult r;
  {
    py::gil_scoped_release unlock;
    r = run_monte_carlo(spec, M, seed, opt);
  }
  py::list rows;
  for (const auto& row : r.table.rows) {
    py::dict d;
    d["scenario"] = row.scenario;
    d["estimator"] = row.estimator;
    d["misspec"] = row.misspec;
    d["bias"] = row.bias;
    d["sd"] = row.sd;
    d["mean_se"] = row.mean_se;
    d["mse"] = row.mse;
    d["coverage"] = row.coverage;
    d["ci_len"] = row.ci_len;
    d["M"] = row.M;
    rows.append(d);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-site causal effect estimation with federated weighting and site selection";

  static py::exception<Error> error(m, "FedCausalError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::handle(error.ptr())(e.what());
      inst.attr("code") = to_string(e.code());
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  m.def("scenario_ids", &scenario_ids, "Built-in scenario ids.");
  m.def("true_psi", &true_values, py::arg("scenario") = "1.1", py::arg("measure") = "rr",
        "Target estimand of a scenario (id or JSON path).");
  m.def("generate", &generate_sites, py::arg("scenario") = "1.1", py::arg("seed") = 1,
        py::arg("n") = py::none(), "Simulated sites as {site: (y, a, x)}.");
  m.def("estimate", &estimate, py::arg("sites"), py::arg("method") = "MR1", py::arg("measure") = "rr",
        py::arg("site_ids") = py::none(), "DR-t, MR1 or MR2 on in-memory sites.");
  m.def("run", &run, py::arg("sites"),
        py::arg("estimators") = std::vector<std::string>{"DR-t", "MR1", "FWMR1", "FSMR1"},
        py::arg("measure") = "rr", py::arg("B") = 200, py::arg("seed") = 1,
        py::arg("thresholds") = std::vector<double>{}, py::arg("lambda_grid") = std::vector<double>{},
        py::arg("transport") = "inprocess", py::arg("directory") = py::none(),
        "DR-t plus the requested estimators; optionally through a federation transport.");
  m.def("monte_carlo", &monte_carlo, py::arg("scenario"), py::arg("M"), py::arg("seed") = 1,
        py::arg("n") = py::none(), py::arg("estimators") = py::none(), py::arg("misspec") = py::none(),
        py::arg("B") = 200, "Metrics rows of a Monte Carlo study.");
  m.def("project_simplex", &project_simplex, py::arg("v"), "Euclidean projection onto the simplex.");
}
