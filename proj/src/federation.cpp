#include "fedcausal/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "fedcausal/rng.hpp"

namespace fedcausal {

namespace {

[[noreturn]] void protocol_error(const std::string& what) {
  throw Error(ErrorCode::ProtocolViolation, what);
}

std::string origin_label(int origin) {
  return origin == kCoordinator ? "coordinator" : "site" + std::to_string(origin);
}

}  // namespace

Json Message::to_json() const {
  return {{"round", round},
          {"origin", origin},
          {"kind", kind},
          {"payload", payload},
          {"schema_version", schema_version}};
}

Message Message::from_json(const Json& j) {
  try {
    Message m;
    m.round = j.at("round").get<int>();
    m.origin = j.at("origin").get<int>();
    m.kind = j.at("kind").get<std::string>();
    m.payload = j.at("payload");
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kSchemaVersion) {
      protocol_error("unsupported schema_version " + std::to_string(m.schema_version));
    }
    return m;
  } catch (const Json::exception& e) {
    protocol_error(std::string("malformed message: ") + e.what());
  }
}

void MemoryTransport::send(const Message& m) {
  std::string text = m.to_json().dump();
  log_.push_back(text);
  box_[{m.round, m.origin, m.kind}] = std::move(text);
}

Message MemoryTransport::fetch(int round, int origin, const std::string& kind) {
  const auto it = box_.find({round, origin, kind});
  if (it == box_.end()) {
    protocol_error("no '" + kind + "' message from " + origin_label(origin) + " in round " +
                   std::to_string(round));
  }
  return Message::from_json(Json::parse(it->second));
}

std::vector<Message> MemoryTransport::transcript() const {
  std::vector<Message> out;
  out.reserve(log_.size());
  for (const auto& text : log_) out.push_back(Message::from_json(Json::parse(text)));
  return out;
}

FileTransport::FileTransport(std::filesystem::path dir) : outbox_(std::move(dir) / "outbox") {
  std::error_code ec;
  std::filesystem::create_directories(outbox_, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + outbox_.string());
}

std::string FileTransport::file_name(int round, int origin, const std::string& kind) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%07d", round);
  return std::string(buf) + "_" + origin_label(origin) + "_" + kind + ".json";
}

void FileTransport::send(const Message& m) {
  const auto path = outbox_ / file_name(m.round, m.origin, m.kind);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << m.to_json().dump() << '\n';
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
  sent_.push_back(path);
}

Message FileTransport::fetch(int round, int origin, const std::string& kind) {
  const auto path = outbox_ / file_name(round, origin, kind);
  std::ifstream in(path);
  if (!in) {
    protocol_error("missing message file " + path.filename().string());
  }
  try {
    return Message::from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    protocol_error(path.string() + ": " + e.what());
  }
}

std::vector<Message> FileTransport::transcript() const {
  std::vector<Message> out;
  out.reserve(sent_.size());
  for (const auto& path : sent_) {
    std::ifstream in(path);
    out.push_back(Message::from_json(Json::parse(in)));
  }
  return out;
}

std::vector<Message> read_transcript(const std::filesystem::path& outbox) {
  if (!std::filesystem::is_directory(outbox)) protocol_error("no outbox at " + outbox.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(outbox)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Message> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      out.push_back(Message::from_json(Json::parse(in)));
    } catch (const Json::exception& e) {
      protocol_error(f.string() + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- SiteNode

SiteNode::SiteNode(SiteDataset data, NuisanceConfig config)
    : data_(std::move(data)), config_(std::move(config)) {}

const SiteDataset& SiteNode::view(const Json& payload) {
  const int b = payload.at("replicate").get<int>();
  if (b < 0) return data_;
  BootstrapPlan plan;
  plan.B = payload.at("boot_B").get<int>();
  plan.seed = payload.at("boot_seed").get<std::uint64_t>();
  if (!resampled_ || cached_replicate_ != b || cached_seed_ != plan.seed) {
    resampled_ = resample_site(data_, plan, b);
    cached_replicate_ = b;
    cached_seed_ = plan.seed;
  }
  return *resampled_;
}

void SiteNode::serve(Transport& transport, int round, const std::string& kind) {
  const Message request = transport.fetch(round, kCoordinator, kind);
  transport.send(handle(request));
}

Message SiteNode::handle(const Message& request) {
  if (request.origin != kCoordinator) protocol_error("requests must come from the coordinator");
  const Json& p = request.payload;
  const auto recipients = p.at("recipients").get<std::vector<int>>();
  if (std::find(recipients.begin(), recipients.end(), site_id()) == recipients.end()) {
    protocol_error("site " + std::to_string(site_id()) + " is not a recipient of round " +
                   std::to_string(request.round));
  }
  log_.push_back(request);
  Message reply;
  reply.round = request.round;
  reply.origin = site_id();
  reply.kind = request.kind;
  const CausalMeasure measure(parse_measure(p.value("measure", std::string("rr"))));

  if (request.kind == "local_models") {
    reply.payload = to_json(fit_local_models(view(p), config_));
  } else if (request.kind == "membership_stats") {
    const FeatureMap f = feature_map_from_json(p.at("features"));
    const Eigen::VectorXd beta = vector_from_json(p.at("beta"));
    const SiteDataset& d = view(p);
    reply.payload = to_json(membership_stats(d, site_id() == MultiSiteData::kTargetId, f, beta));
  } else if (request.kind == "tau_stats") {
    const FeatureMap f = feature_map_from_json(p.at("features"));
    const GlmModel mu0 = glm_from_json(p.at("mu0").at(std::to_string(site_id())));
    reply.payload = to_json(tau_stats(view(p), mu0, measure, f));
  } else if (request.kind == "contribution") {
    const NuisanceBundle bundle = bundle_from_json(p.at("bundle"));
    const Method mode = parse_method(p.at("mode").get<std::string>());
    const int b = p.at("replicate").get<int>();
    SiteContribution c = site_contribution(view(p), bundle, mode);
    reply.payload = to_json(site_sums(c));
    contributions_[{p.at("tag").get<std::string>(), b}] = std::move(c);
  } else if (request.kind == "influence_sq") {
    const int b = p.at("replicate").get<int>();
    const auto key = std::make_pair(p.at("tag").get<std::string>(), b);
    const auto it = contributions_.find(key);
    if (it == contributions_.end()) protocol_error("influence requested before contribution round");
    const PointEstimate point = point_from_json(p.at("point"));
    reply.payload = {{"sum_sq", site_influence_sq_sum(it->second, point, measure)}};
    if (b >= 0) contributions_.erase(it);
  } else if (request.kind == "gram") {
    const auto tags = p.at("tags").get<std::vector<std::string>>();
    std::vector<const SiteContribution*> columns;
    for (const auto& t : tags) {
      const auto it = contributions_.find({t, -1});
      columns.push_back(it == contributions_.end() ? nullptr : &it->second);
    }
    const GramPartial g = site_gram_partial(site_id(), columns, p.at("psi1").get<double>(),
                                            p.at("p0").get<double>(), p.at("folds").get<int>(),
                                            p.at("fold_seed").get<std::uint64_t>());
    Json folds = Json::array();
    for (const auto& m : g.folds) folds.push_back(to_json(m));
    reply.payload = {{"full", to_json(g.full)}, {"folds", folds}, {"n", g.n}, {"fold_n", g.fold_n}};
  } else {
    protocol_error("unknown request kind '" + request.kind + "'");
  }
  log_.push_back(reply);
  return reply;
}

// ---------------------------------------------------------------- Gram

GramPartial& GramPartial::operator+=(const GramPartial& other) {
  full += other.full;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    folds[f] += other.folds[f];
    fold_n[f] += other.fold_n[f];
  }
  n += other.n;
  return *this;
}

GramPartial site_gram_partial(int site_id, const std::vector<const SiteContribution*>& columns,
                              double psi1_target, double p0, int folds, std::uint64_t fold_seed) {
  if (folds < 2) throw Error(ErrorCode::ConfigError, "cross-validation needs at least 2 folds");
  const auto m = static_cast<Eigen::Index>(columns.size());
  Eigen::Index n = -1;
  for (const auto* c : columns) {
    if (!c) continue;
    if (n >= 0 && c->n() != n) protocol_error("contributions of one site differ in length");
    n = c->n();
  }
  GramPartial g;
  g.full = Eigen::MatrixXd::Zero(m, m);
  g.folds.assign(static_cast<std::size_t>(folds), Eigen::MatrixXd::Zero(m, m));
  g.fold_n.assign(static_cast<std::size_t>(folds), 0);
  if (n < 0) return g;
  g.n = n;
  const double target = site_id == MultiSiteData::kTargetId ? 1.0 : 0.0;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(n, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const SiteContribution* c = columns[static_cast<std::size_t>(j)];
    if (!c) continue;
    for (Eigen::Index i = 0; i < n; ++i) phi(i, j) = (c->psi1[i] - target * psi1_target) / p0;
  }
  // Rows are dealt into folds after a site-seeded shuffle.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Engine eng(derive_seed(fold_seed, {static_cast<std::uint64_t>(site_id)}));
  std::shuffle(order.begin(), order.end(), eng);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    fold_of[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % static_cast<std::size_t>(folds));
  }
  for (int f : fold_of) ++g.fold_n[static_cast<std::size_t>(f)];
  std::vector<double> prod(static_cast<std::size_t>(n));
  std::vector<double> part;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index k = j; k < m; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) prod[static_cast<std::size_t>(i)] = phi(i, j) * phi(i, k);
      const double total = pairwise_sum(prod);
      g.full(j, k) = g.full(k, j) = total;
      for (int f = 0; f < folds; ++f) {
        part.clear();
        for (Eigen::Index i = 0; i < n; ++i) {
          if (fold_of[static_cast<std::size_t>(i)] == f) part.push_back(prod[static_cast<std::size_t>(i)]);
        }
        const double s = pairwise_sum(part);
        g.folds[static_cast<std::size_t>(f)](j, k) = s;
        g.folds[static_cast<std::size_t>(f)](k, j) = s;
      }
    }
  }
  return g;
}

GramSums gram_from_sums(const Eigen::MatrixXd& sums, Eigen::Index n) {
  if (n <= 0) throw Error(ErrorCode::PreconditionViolation, "Gram sums over zero rows");
  const double nn = static_cast<double>(n);
  const Eigen::Index k = sums.rows() - 1;
  GramSums g;
  g.c = sums(0, 0) / nn;
  g.b = sums.col(0).tail(k) / nn;
  g.G = sums.bottomRightCorner(k, k) / nn;
  return g;
}

// ---------------------------------------------------------------- solver

double penalized_objective(const GramSums& g, const Eigen::VectorXd& delta2, double lambda,
                           const Eigen::VectorXd& w) {
  const Eigen::VectorXd ws = w.tail(w.size() - 1);
  return ws.dot(g.G * ws) - 2.0 * g.b.dot(ws) + g.c + lambda * delta2.dot(ws.cwiseAbs());
}

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0;
  double theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cum += u[static_cast<std::size_t>(i)];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) theta = t;
  }
  Eigen::VectorXd w = (v.array() - theta).max(0.0).matrix();
  // Renormalize the rounding residue so the sum is 1 to machine precision.
  const double s = w.sum();
  if (s > 0.0) w /= s;
  return w;
}

namespace {

Eigen::VectorXd objective_gradient(const GramSums& g, const Eigen::VectorXd& delta2, double lambda,
                                   const Eigen::VectorXd& w) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(w.size());
  const Eigen::VectorXd ws = w.tail(w.size() - 1);
  grad.tail(w.size() - 1) = 2.0 * (g.G * ws) - 2.0 * g.b + lambda * delta2;
  return grad;
}

struct Run {
  Eigen::VectorXd w;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
};

Run projected_gradient(const GramSums& g, const Eigen::VectorXd& delta2, double lambda,
                       Eigen::VectorXd w, const SolverOptions& opt) {
  double f = penalized_objective(g, delta2, lambda, w);
  const double lip = 2.0 * std::max(g.G.cwiseAbs().rowwise().sum().maxCoeff(), 1e-12);
  double step = 1.0 / lip;
  Run r;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Eigen::VectorXd grad = objective_gradient(g, delta2, lambda, w);
    const double pg = (w - project_simplex(w - grad)).norm();
    r.iterations = it;
    if (pg < opt.tol) {
      r.converged = true;
      break;
    }
    double t = step * 2.0;
    Eigen::VectorXd next;
    double change = 0.0;
    bool accepted = false;
    for (int h = 0; h < 60; ++h) {
      next = project_simplex(w - t * grad);
      // Exact change of the quadratic objective; avoids cancellation in f(next) - f(w).
      const Eigen::VectorXd d = (next - w).tail(w.size() - 1);
      const double slope = grad.dot(next - w);
      change = d.dot(g.G * d) + slope;
      if (change <= 1e-4 * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    step = t;
    const bool stalled = (next - w).norm() == 0.0;
    w = next;
    f += change;
    if (stalled) {
      r.converged = (w - project_simplex(w - objective_gradient(g, delta2, lambda, w))).norm() < opt.tol;
      break;
    }
  }
  r.w = w;
  r.f = penalized_objective(g, delta2, lambda, w);
  return r;
}

}  // namespace

FederatedWeights solve_weights(const GramSums& g, const Eigen::VectorXd& delta2, double lambda,
                               const SolverOptions& options) {
  if (lambda < 0.0) throw Error(ErrorCode::PreconditionViolation, "lambda must be >= 0");
  const Eigen::Index k = g.G.rows();
  if (g.G.cols() != k || g.b.size() != k || delta2.size() != k) {
    throw Error(ErrorCode::DimensionMismatch, "Gram, b and discrepancies differ in size");
  }
  FederatedWeights best;
  best.lambda = lambda;
  if (k == 0) {
    best.w = Eigen::VectorXd::Ones(1);
    best.objective = g.c;
    return best;
  }
  Engine eng(options.seed);
  std::exponential_distribution<double> expo(1.0);
  bool have = false;
  bool any_converged = false;
  int total_iter = 0;
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    Eigen::VectorXd start(k + 1);
    if (r == 0) {
      start.setZero();
      start[0] = 1.0;
    } else {
      for (Eigen::Index i = 0; i <= k; ++i) start[i] = expo(eng);
      start /= start.sum();
    }
    const Run run = projected_gradient(g, delta2, lambda, start, options);
    total_iter += run.iterations;
    any_converged = any_converged || run.converged;
    if (!have || run.f < best.objective) {
      best.w = run.w;
      best.objective = run.f;
      best.converged = run.converged;
      have = true;
    }
  }
  best.converged = best.converged || any_converged;
  best.iterations = total_iter;
  return best;
}

std::vector<double> default_lambda_grid(Eigen::Index n) {
  const double nn = static_cast<double>(n);
  return {0.0, std::pow(nn, 0.3), std::pow(nn, 0.4), std::pow(nn, 0.45)};
}

double select_lambda(const std::vector<GramSums>& train, const std::vector<GramSums>& held_out,
                     const Eigen::VectorXd& delta2, const std::vector<double>& grid,
                     const SolverOptions& options) {
  if (grid.empty()) throw Error(ErrorCode::EmptyGrid, "lambda grid is empty");
  if (grid.size() == 1) return grid.front();
  if (train.size() != held_out.size() || train.empty()) {
    throw Error(ErrorCode::PreconditionViolation, "fold sums are missing");
  }
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(delta2.size());
  double best_loss = INFINITY;
  double best = grid.front();
  for (double lambda : grid) {
    double loss = 0.0;
    for (std::size_t f = 0; f < train.size(); ++f) {
      const FederatedWeights w = solve_weights(train[f], delta2, lambda, options);
      loss += penalized_objective(held_out[f], zero, 0.0, w.w);
    }
    loss /= static_cast<double>(train.size());
    if (loss < best_loss) {
      best_loss = loss;
      best = lambda;
    }
  }
  return best;
}

// ---------------------------------------------------------------- coordinator

Federation::Federation(Transport& transport, std::vector<SiteNode>& nodes, FedConfig config)
    : transport_(transport), nodes_(nodes), config_(std::move(config)) {
  for (const auto& n : nodes_) ids_.push_back(n.site_id());
  std::sort(ids_.begin(), ids_.end());
  if (std::adjacent_find(ids_.begin(), ids_.end()) != ids_.end()) {
    protocol_error("two nodes share a site id");
  }
  if (ids_.empty() || ids_.front() != MultiSiteData::kTargetId) {
    throw Error(ErrorCode::MissingTargetSite, "federation has no target node (site 0)");
  }
  if (config_.nuisance.tau_strategy != TauStrategy::TreatedProductRegression) {
    throw Error(ErrorCode::ConfigError, "federated runs fit tau by the treated product regression");
  }
}

std::vector<Message> Federation::exchange(const std::string& kind, const std::vector<int>& recipients,
                                          Json payload) {
  ++round_;
  payload["recipients"] = recipients;
  payload["measure"] = to_string(config_.measure);
  Message request;
  request.round = round_;
  request.origin = kCoordinator;
  request.kind = kind;
  request.payload = std::move(payload);
  transport_.send(request);
  std::vector<Message> replies;
  for (int id : recipients) {
    auto it = std::find_if(nodes_.begin(), nodes_.end(), [&](const SiteNode& n) { return n.site_id() == id; });
    if (it == nodes_.end()) protocol_error("no node for site " + std::to_string(id));
    it->serve(transport_, round_, kind);
  }
  for (int id : recipients) {
    Message reply = transport_.fetch(round_, id, kind);
    if (reply.origin != id || reply.round != round_) protocol_error("reply does not match its round");
    replies.push_back(std::move(reply));
  }
  return replies;
}

Json Federation::replicate_fields(int replicate) const {
  return {{"replicate", replicate}, {"boot_seed", plan_.seed}, {"boot_B", plan_.B}};
}

int Federation::fit_replicate(int replicate) const {
  return replicate >= 0 && !plan_.refit ? -1 : replicate;
}

std::string Federation::tag_of(const std::vector<int>& sites) {
  std::string t = "s";
  for (std::size_t i = 0; i < sites.size(); ++i) t += (i ? "_" : "") + std::to_string(sites[i]);
  return t;
}

const LocalModels& Federation::local(int site, int replicate) {
  const auto key = std::make_pair(site, replicate);
  auto it = locals_.find(key);
  if (it != locals_.end()) return it->second;
  if (replicate >= 0) {
    // Replicate fits are only needed while that replicate is processed.
    for (auto i = locals_.begin(); i != locals_.end();) {
      i = i->first.second >= 0 ? locals_.erase(i) : std::next(i);
    }
  }
  const auto replies = exchange("local_models", ids_, replicate_fields(replicate));
  for (const auto& r : replies) locals_[{r.origin, replicate}] = local_models_from_json(r.payload);
  it = locals_.find(key);
  if (it == locals_.end()) protocol_error("site " + std::to_string(site) + " sent no local models");
  return it->second;
}

const DensityRatioModel& Federation::ratio(int k, int replicate) {
  const auto key = std::make_pair(k, replicate);
  auto it = ratios_.find(key);
  if (it != ratios_.end()) return it->second;
  if (replicate >= 0) {
    for (auto i = ratios_.begin(); i != ratios_.end();) {
      i = i->first.second >= 0 && i->first.second != replicate ? ratios_.erase(i) : std::next(i);
    }
  }
  const FeatureMap features = config_.nuisance.ratio_features;
  Eigen::Index n0 = 0;
  Eigen::Index nk = 0;
  const Eigen::Index p = nodes_.front().p();
  const LogisticFit fit = fit_logistic_stats(
      [&](const Eigen::VectorXd& beta) {
        Json payload = replicate_fields(replicate);
        payload["features"] = to_json(features);
        payload["beta"] = to_json(beta);
        payload["pair"] = k;
        const auto replies = exchange("membership_stats", {MultiSiteData::kTargetId, k}, payload);
        LogisticStats s = logistic_stats_from_json(replies[0].payload);
        const LogisticStats sk = logistic_stats_from_json(replies[1].payload);
        n0 = s.n;
        nk = sk.n;
        s += sk;
        return s;
      },
      features.dim(p), config_.nuisance.logistic);
  GlmModel logit;
  logit.family = Family::Logistic;
  logit.coef = fit.coef;
  logit.features = features;
  logit.converged_via_ridge = fit.converged_via_ridge;
  logit.iterations = fit.iterations;
  return ratios_[key] = make_density_ratio(k, std::move(logit), n0, nk, config_.nuisance);
}

const TauModel& Federation::tau(const std::vector<int>& sites, int replicate) {
  const auto key = std::make_pair(tag_of(sites), replicate);
  auto it = taus_.find(key);
  if (it != taus_.end()) return it->second;
  if (replicate >= 0) {
    for (auto i = taus_.begin(); i != taus_.end();) {
      i = i->first.second >= 0 && i->first.second != replicate ? taus_.erase(i) : std::next(i);
    }
  }
  Json payload = replicate_fields(replicate);
  payload["features"] = to_json(config_.nuisance.tau_features);
  Json mu0 = Json::object();
  for (int k : sites) mu0[std::to_string(k)] = to_json(local(k, replicate).mu0);
  payload["mu0"] = mu0;
  const auto replies = exchange("tau_stats", sites, payload);
  LinearStats total = linear_stats_from_json(replies[0].payload);
  for (std::size_t i = 1; i < replies.size(); ++i) total += linear_stats_from_json(replies[i].payload);
  return taus_[key] = tau_from_stats(total, CausalMeasure(config_.measure), config_.nuisance.tau_features);
}

NuisanceBundle Federation::bundle_for(const std::vector<int>& sites, int replicate) {
  std::vector<int> s = sites;
  std::sort(s.begin(), s.end());
  const int fr = fit_replicate(replicate);
  std::map<int, LocalModels> locals;
  std::map<int, DensityRatioModel> ratios;
  for (int k : s) {
    if (!std::binary_search(ids_.begin(), ids_.end(), k)) {
      protocol_error("site " + std::to_string(k) + " has no node");
    }
    locals.emplace(k, local(k, fr));
    if (k != MultiSiteData::kTargetId) ratios.emplace(k, ratio(k, fr));
  }
  return assemble_bundle(s, config_.measure, locals, ratios, tau(s, fr));
}

EstimateReport Federation::estimate_set(const std::vector<int>& sites, int replicate, Method label) {
  std::vector<int> s = sites;
  std::sort(s.begin(), s.end());
  const CausalMeasure measure(config_.measure);
  if (s.size() > 1 && measure.kind() != MeasureKind::RiskRatio) {
    throw Error(ErrorCode::UnsupportedMeasureForMode,
                "MR1 with sources is implemented for the risk ratio only");
  }
  const NuisanceBundle bundle = bundle_for(s, replicate);
  const std::string tag = tag_of(s);
  Json payload = replicate_fields(replicate);
  payload["tag"] = tag;
  payload["mode"] = to_string(Method::MR1);
  payload["bundle"] = to_json(bundle);
  const auto replies = exchange("contribution", s, payload);
  std::vector<SiteSums> sums;
  for (const auto& r : replies) sums.push_back(site_sums_from_json(r.payload));
  const PointEstimate point = aggregate_point(sums, measure);
  Json sq_payload = replicate_fields(replicate);
  sq_payload["tag"] = tag;
  sq_payload["point"] = to_json(point);
  const auto sq_replies = exchange("influence_sq", s, sq_payload);
  double sq = 0.0;
  for (const auto& r : sq_replies) sq += r.payload.at("sum_sq").get<double>();
  return finalize_report(point, sq, label, measure, s);
}

FwResult Federation::fit_weights() {
  FwResult out;
  out.target_only = estimate_set({MultiSiteData::kTargetId}, -1, Method::DRt);
  const double psi1_target = out.target_only.psi1_hat;
  std::vector<std::string> tags{tag_of({MultiSiteData::kTargetId})};
  PairwiseEstimate self;
  self.k = MultiSiteData::kTargetId;
  self.psi1_pair = psi1_target;
  self.report = out.target_only;
  out.pairs.push_back(self);
  for (int k : ids_) {
    if (k == MultiSiteData::kTargetId) continue;
    PairwiseEstimate pe;
    pe.k = k;
    pe.report = estimate_set({MultiSiteData::kTargetId, k}, -1, Method::MR1);
    pe.psi1_pair = pe.report.psi1_hat;
    pe.delta_hat = std::abs(pe.psi1_pair - psi1_target);
    out.pairs.push_back(pe);
    tags.push_back(tag_of({MultiSiteData::kTargetId, k}));
  }
  Eigen::Index n_all = 0;
  for (const auto& node : nodes_) n_all += node.n();
  const double p0 = static_cast<double>(out.target_only.n_used) / static_cast<double>(n_all);

  Json payload{{"tags", tags},
               {"psi1", psi1_target},
               {"p0", p0},
               {"folds", config_.folds},
               {"fold_seed", derive_seed(config_.seed, {0x6f6c64ULL})},
               {"replicate", -1}};
  const auto replies = exchange("gram", ids_, payload);
  GramPartial total;
  bool first = true;
  for (const auto& r : replies) {
    GramPartial g;
    g.full = matrix_from_json(r.payload.at("full"));
    for (const auto& f : r.payload.at("folds")) g.folds.push_back(matrix_from_json(f));
    g.n = r.payload.at("n").get<Eigen::Index>();
    g.fold_n = r.payload.at("fold_n").get<std::vector<Eigen::Index>>();
    if (first) {
      total = g;
      first = false;
    } else {
      total += g;
    }
  }
  // Rows of sites outside every pair still count in Pn.
  out.gram = gram_from_sums(total.full, n_all);
  const auto k = static_cast<Eigen::Index>(ids_.size()) - 1;
  Eigen::VectorXd delta2(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double d = out.pairs[static_cast<std::size_t>(j + 1)].delta_hat;
    delta2[j] = d * d;
  }
  std::vector<GramSums> train;
  std::vector<GramSums> held;
  for (std::size_t f = 0; f < total.folds.size(); ++f) {
    Eigen::MatrixXd tr = Eigen::MatrixXd::Zero(total.full.rows(), total.full.cols());
    Eigen::Index tn = 0;
    for (std::size_t g = 0; g < total.folds.size(); ++g) {
      if (g == f) continue;
      tr += total.folds[g];
      tn += total.fold_n[g];
    }
    train.push_back(gram_from_sums(tr, tn));
    held.push_back(gram_from_sums(total.folds[f], total.fold_n[f]));
  }
  const std::vector<double> grid =
      config_.lambda_grid.empty() ? default_lambda_grid(n_all) : config_.lambda_grid;
  const double lambda = k == 0 ? 0.0 : select_lambda(train, held, delta2, grid, config_.solver);
  out.weights = solve_weights(out.gram, delta2, lambda, config_.solver);
  out.pairs[0].eif_gram_row = out.gram.b;
  for (Eigen::Index j = 0; j < k; ++j) {
    out.pairs[static_cast<std::size_t>(j + 1)].eif_gram_row = out.gram.G.row(j).transpose();
  }
  return out;
}

std::vector<SiteNode> make_nodes(const MultiSiteData& data, const NuisanceConfig& config) {
  std::vector<SiteNode> nodes;
  for (const auto& [k, site] : data.sites()) nodes.emplace_back(site, config);
  return nodes;
}

// ---------------------------------------------------------------- audit

namespace {

const std::map<std::string, std::set<std::string>>& request_schemas() {
  static const std::map<std::string, std::set<std::string>> s{
      {"local_models", {"recipients", "measure", "replicate", "boot_seed", "boot_B"}},
      {"membership_stats",
       {"recipients", "measure", "replicate", "boot_seed", "boot_B", "features", "beta", "pair"}},
      {"tau_stats", {"recipients", "measure", "replicate", "boot_seed", "boot_B", "features", "mu0"}},
      {"contribution",
       {"recipients", "measure", "replicate", "boot_seed", "boot_B", "tag", "mode", "bundle"}},
      {"influence_sq", {"recipients", "measure", "replicate", "boot_seed", "boot_B", "tag", "point"}},
      {"gram", {"recipients", "measure", "replicate", "tags", "psi1", "p0", "folds", "fold_seed"}},
  };
  return s;
}

const std::map<std::string, std::set<std::string>>& reply_schemas() {
  static const std::map<std::string, std::set<std::string>> s{
      {"local_models", {"site", "propensity", "mu0", "mu1", "var0", "var1"}},
      {"membership_stats", {"gradient", "hessian", "loglik", "max_abs_eta", "n", "positives"}},
      {"tau_stats", {"gram", "cross", "n"}},
      {"contribution", {"site", "n", "psi1_sum", "psi0_sum", "fallback_rows"}},
      {"influence_sq", {"sum_sq"}},
      {"gram", {"full", "folds", "n", "fold_n"}},
  };
  return s;
}

void check_arrays(const Json& j, const std::string& where, Eigen::Index max_array,
                  std::vector<std::string>& issues) {
  if (j.is_array()) {
    if (static_cast<Eigen::Index>(j.size()) > max_array) {
      issues.push_back(where + ": array of length " + std::to_string(j.size()) + " exceeds " +
                       std::to_string(max_array));
    }
    for (std::size_t i = 0; i < j.size(); ++i) check_arrays(j[i], where, max_array, issues);
  } else if (j.is_object()) {
    for (const auto& [key, v] : j.items()) check_arrays(v, where + "." + key, max_array, issues);
  }
}

}  // namespace

std::vector<std::string> privacy_audit(const std::vector<Message>& transcript, Eigen::Index max_array) {
  std::vector<std::string> issues;
  for (const auto& m : transcript) {
    const std::string where = "round " + std::to_string(m.round) + " " + origin_label(m.origin) +
                              " " + m.kind;
    const auto& schemas = m.origin == kCoordinator ? request_schemas() : reply_schemas();
    const auto it = schemas.find(m.kind);
    if (it == schemas.end()) {
      issues.push_back(where + ": unknown message kind");
      continue;
    }
    if (!m.payload.is_object()) {
      issues.push_back(where + ": payload is not an object");
      continue;
    }
    for (const auto& [key, v] : m.payload.items()) {
      if (!it->second.count(key)) issues.push_back(where + ": unexpected field '" + key + "'");
    }
    check_arrays(m.payload, where, max_array, issues);
  }
  return issues;
}

}  // namespace fedcausal
