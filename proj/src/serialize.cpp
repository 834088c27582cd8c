#include "fedcausal/serialize.hpp"

#include <cstdio>
#include <fstream>

namespace fedcausal {

Json to_json(const Eigen::VectorXd& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

Json to_json(const Eigen::MatrixXd& m) {
  Json j = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::SchemaError, "ragged matrix in JSON payload");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Json to_json(const FeatureMap& f) {
  return {{"transform", to_string(f.transform)}, {"basis", to_string(f.basis)}};
}

FeatureMap feature_map_from_json(const Json& j) {
  return {parse_transform(j.at("transform").get<std::string>()),
          parse_basis(j.at("basis").get<std::string>())};
}

Json to_json(const GlmModel& m) {
  Json j{{"family", to_string(m.family)},
         {"coef", to_json(m.coef)},
         {"features", to_json(m.features)},
         {"converged_via_ridge", m.converged_via_ridge},
         {"iterations", m.iterations}};
  if (m.clip) j["clip"] = {m.clip->lo, m.clip->hi};
  return j;
}

GlmModel glm_from_json(const Json& j) {
  GlmModel m;
  m.family = parse_family(j.at("family").get<std::string>());
  m.coef = vector_from_json(j.at("coef"));
  m.features = feature_map_from_json(j.at("features"));
  m.converged_via_ridge = j.at("converged_via_ridge").get<bool>();
  m.iterations = j.at("iterations").get<int>();
  if (j.contains("clip")) m.clip = ClipBounds{j["clip"][0].get<double>(), j["clip"][1].get<double>()};
  return m;
}

Json to_json(const DensityRatioModel& m) {
  return {{"k", m.k},
          {"logit", to_json(m.logit)},
          {"prior_correction", m.prior_correction},
          {"clip", {m.clip.lo, m.clip.hi}}};
}

DensityRatioModel density_ratio_from_json(const Json& j) {
  DensityRatioModel m;
  m.k = j.at("k").get<int>();
  m.logit = glm_from_json(j.at("logit"));
  m.prior_correction = j.at("prior_correction").get<double>();
  m.clip = ClipBounds{j.at("clip")[0].get<double>(), j.at("clip")[1].get<double>()};
  return m;
}

Json to_json(const TauModel& m) {
  return {{"measure", to_string(m.measure)}, {"model", to_json(m.model)}};
}

TauModel tau_from_json(const Json& j) {
  TauModel m;
  m.measure = parse_measure(j.at("measure").get<std::string>());
  m.model = glm_from_json(j.at("model"));
  return m;
}

Json to_json(const VarianceModel& m) {
  Json j{{"mode", to_string(m.mode)}, {"value", m.value}, {"floor", m.floor}};
  if (m.regression) j["regression"] = to_json(*m.regression);
  return j;
}

VarianceModel variance_from_json(const Json& j) {
  VarianceModel m;
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "constant") {
    m.mode = VarianceMode::Constant;
  } else if (mode == "regression") {
    m.mode = VarianceMode::Regression;
  } else {
    throw Error(ErrorCode::SchemaError, "unknown variance mode '" + mode + "'");
  }
  m.value = j.at("value").get<double>();
  m.floor = j.at("floor").get<double>();
  if (j.contains("regression")) m.regression = glm_from_json(j["regression"]);
  return m;
}

Json to_json(const LocalModels& m) {
  return {{"site", m.site},           {"propensity", to_json(m.propensity)},
          {"mu0", to_json(m.mu0)},    {"mu1", to_json(m.mu1)},
          {"var0", to_json(m.var0)},  {"var1", to_json(m.var1)}};
}

LocalModels local_models_from_json(const Json& j) {
  LocalModels m;
  m.site = j.at("site").get<int>();
  m.propensity = glm_from_json(j.at("propensity"));
  m.mu0 = glm_from_json(j.at("mu0"));
  m.mu1 = glm_from_json(j.at("mu1"));
  m.var0 = variance_from_json(j.at("var0"));
  m.var1 = variance_from_json(j.at("var1"));
  return m;
}

Json to_json(const NuisanceBundle& b) {
  Json j;
  j["sites"] = b.sites;
  j["measure"] = to_string(b.measure);
  auto model_map = [](const std::map<int, GlmModel>& m) {
    Json out = Json::array();
    for (const auto& [k, model] : m) out.push_back({{"site", k}, {"model", to_json(model)}});
    return out;
  };
  j["propensity"] = model_map(b.propensity);
  j["mu0"] = model_map(b.mu0);
  j["mu1"] = model_map(b.mu1);
  if (b.mu0_pooled) j["mu0_pooled"] = to_json(*b.mu0_pooled);
  if (b.mu1_pooled) j["mu1_pooled"] = to_json(*b.mu1_pooled);
  j["tau"] = to_json(b.tau);
  j["density_ratio"] = Json::array();
  for (const auto& [k, q] : b.density_ratio) j["density_ratio"].push_back(to_json(q));
  j["cond_var"] = Json::array();
  for (const auto& [key, v] : b.cond_var) {
    j["cond_var"].push_back({{"arm", key.first}, {"site", key.second}, {"model", to_json(v)}});
  }
  return j;
}

NuisanceBundle bundle_from_json(const Json& j) {
  NuisanceBundle b;
  b.sites = j.at("sites").get<std::vector<int>>();
  b.measure = parse_measure(j.at("measure").get<std::string>());
  auto read_map = [](const Json& arr, std::map<int, GlmModel>& out) {
    for (const auto& e : arr) out.emplace(e.at("site").get<int>(), glm_from_json(e.at("model")));
  };
  read_map(j.at("propensity"), b.propensity);
  read_map(j.at("mu0"), b.mu0);
  read_map(j.at("mu1"), b.mu1);
  if (j.contains("mu0_pooled")) b.mu0_pooled = glm_from_json(j["mu0_pooled"]);
  if (j.contains("mu1_pooled")) b.mu1_pooled = glm_from_json(j["mu1_pooled"]);
  b.tau = tau_from_json(j.at("tau"));
  for (const auto& e : j.at("density_ratio")) {
    DensityRatioModel q = density_ratio_from_json(e);
    b.density_ratio.emplace(q.k, std::move(q));
  }
  for (const auto& e : j.at("cond_var")) {
    b.cond_var.emplace(std::make_pair(e.at("arm").get<int>(), e.at("site").get<int>()),
                       variance_from_json(e.at("model")));
  }
  return b;
}

Json to_json(const LogisticStats& s) {
  return {{"gradient", to_json(s.gradient)}, {"hessian", to_json(s.hessian)},
          {"loglik", s.loglik},              {"max_abs_eta", s.max_abs_eta},
          {"n", s.n},                        {"positives", s.positives}};
}

LogisticStats logistic_stats_from_json(const Json& j) {
  LogisticStats s;
  s.gradient = vector_from_json(j.at("gradient"));
  s.hessian = matrix_from_json(j.at("hessian"));
  s.loglik = j.at("loglik").get<double>();
  s.max_abs_eta = j.at("max_abs_eta").get<double>();
  s.n = j.at("n").get<Eigen::Index>();
  s.positives = j.at("positives").get<Eigen::Index>();
  return s;
}

Json to_json(const LinearStats& s) {
  return {{"gram", to_json(s.gram)}, {"cross", to_json(s.cross)}, {"n", s.n}};
}

LinearStats linear_stats_from_json(const Json& j) {
  LinearStats s;
  s.gram = matrix_from_json(j.at("gram"));
  s.cross = vector_from_json(j.at("cross"));
  s.n = j.at("n").get<Eigen::Index>();
  return s;
}

Json to_json(const SiteSums& s) {
  return {{"site", s.site},
          {"n", s.n},
          {"psi1_sum", s.psi1_sum},
          {"psi0_sum", s.psi0_sum},
          {"fallback_rows", s.fallback_rows}};
}

SiteSums site_sums_from_json(const Json& j) {
  SiteSums s;
  s.site = j.at("site").get<int>();
  s.n = j.at("n").get<Eigen::Index>();
  s.psi1_sum = j.at("psi1_sum").get<double>();
  s.psi0_sum = j.at("psi0_sum").get<double>();
  s.fallback_rows = j.at("fallback_rows").get<Eigen::Index>();
  return s;
}

Json to_json(const PointEstimate& p) {
  return {{"psi0", p.psi0}, {"psi1", p.psi1}, {"psi", p.psi},  {"p0", p.p0},
          {"n", p.n},       {"n0", p.n0},     {"fallback_rows", p.fallback_rows}};
}

PointEstimate point_from_json(const Json& j) {
  PointEstimate p;
  p.psi0 = j.at("psi0").get<double>();
  p.psi1 = j.at("psi1").get<double>();
  p.psi = j.at("psi").get<double>();
  p.p0 = j.at("p0").get<double>();
  p.n = j.at("n").get<Eigen::Index>();
  p.n0 = j.at("n0").get<Eigen::Index>();
  p.fallback_rows = j.at("fallback_rows").get<Eigen::Index>();
  return p;
}

Json to_json(const EstimateReport& r) {
  Json j{{"method", to_string(r.method)},
         {"measure", to_string(r.measure)},
         {"psi_hat", r.psi_hat},
         {"psi0_hat", r.psi0_hat},
         {"psi1_hat", r.psi1_hat},
         {"se", r.se},
         {"ci_lower", r.ci_lower},
         {"ci_upper", r.ci_upper},
         {"selected_sites", r.selected_sites},
         {"n_used", r.n_used},
         {"fallback_rows", r.fallback_rows},
         {"audit", r.audit}};
  if (r.bootstrap_se) j["bootstrap_se"] = *r.bootstrap_se;
  return j;
}

EstimateReport report_from_json(const Json& j) {
  EstimateReport r;
  r.method = parse_method(j.at("method").get<std::string>());
  r.measure = parse_measure(j.at("measure").get<std::string>());
  r.psi_hat = j.at("psi_hat").get<double>();
  r.psi0_hat = j.at("psi0_hat").get<double>();
  r.psi1_hat = j.at("psi1_hat").get<double>();
  r.se = j.at("se").get<double>();
  r.ci_lower = j.at("ci_lower").get<double>();
  r.ci_upper = j.at("ci_upper").get<double>();
  r.selected_sites = j.at("selected_sites").get<std::vector<int>>();
  r.n_used = j.at("n_used").get<Eigen::Index>();
  r.fallback_rows = j.at("fallback_rows").get<Eigen::Index>();
  r.audit = j.at("audit").get<std::map<std::string, std::string>>();
  if (j.contains("bootstrap_se")) r.bootstrap_se = j["bootstrap_se"].get<double>();
  return r;
}

void write_json(const Json& j, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
}

void write_influence_csv(const InfluenceSample& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "phi\n";
  char buf[32];
  for (Eigen::Index i = 0; i < s.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", s.values[i]);
    out << buf << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedcausal
