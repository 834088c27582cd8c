#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedcausal/bootstrap.hpp"
#include "fedcausal/estimators.hpp"
#include "fedcausal/nuisance.hpp"
#include "fedcausal/serialize.hpp"

namespace fedcausal {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kCoordinator = -1;

/// Wire message. Requests come from the coordinator (origin -1) and list
/// their recipients; each recipient answers with the same round and kind.
struct Message {
  int round = 0;
  int origin = kCoordinator;
  std::string kind;
  Json payload;
  int schema_version = kSchemaVersion;

  Json to_json() const;
  static Message from_json(const Json& j);
};

/// Channel between coordinator and sites. Every message passes through its
/// JSON text form, so both backends see exactly the same values.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const Message& m) = 0;
  /// ProtocolViolation if no message with this (round, origin, kind) exists.
  virtual Message fetch(int round, int origin, const std::string& kind) = 0;
  /// Every message sent so far, in send order.
  virtual std::vector<Message> transcript() const = 0;
};

class MemoryTransport : public Transport {
 public:
  void send(const Message& m) override;
  Message fetch(int round, int origin, const std::string& kind) override;
  std::vector<Message> transcript() const override;

 private:
  std::vector<std::string> log_;
  std::map<std::tuple<int, int, std::string>, std::string> box_;
};

/// Writes `outbox/<round>_<origin>_<kind>.json` under a directory.
class FileTransport : public Transport {
 public:
  explicit FileTransport(std::filesystem::path dir);
  void send(const Message& m) override;
  Message fetch(int round, int origin, const std::string& kind) override;
  std::vector<Message> transcript() const override;

  static std::string file_name(int round, int origin, const std::string& kind);
  const std::filesystem::path& outbox() const { return outbox_; }

 private:
  std::filesystem::path outbox_;
  std::vector<std::filesystem::path> sent_;
};

/// Reads every message file in an outbox directory, ordered by file name.
std::vector<Message> read_transcript(const std::filesystem::path& outbox);

/// One site. Holds its rows privately and answers coordinator requests with
/// model parameters and aggregate sums only.
class SiteNode {
 public:
  SiteNode(SiteDataset data, NuisanceConfig config);

  int site_id() const { return data_.site_id(); }
  Eigen::Index n() const { return data_.n(); }
  Eigen::Index p() const { return data_.p(); }

  /// Reads the request addressed to this node from the transport and sends
  /// the reply. ProtocolViolation if the node is not a recipient.
  void serve(Transport& transport, int round, const std::string& kind);

  Message handle(const Message& request);
  const std::vector<Message>& log() const { return log_; }

 private:
  const SiteDataset& view(const Json& payload);

  SiteDataset data_;
  NuisanceConfig config_;
  std::vector<Message> log_;
  int cached_replicate_ = -1;
  std::uint64_t cached_seed_ = 0;
  std::optional<SiteDataset> resampled_;
  std::map<std::pair<std::string, int>, SiteContribution> contributions_;
};

/// Per-site sums of products of pairwise influence values; index 0 is the
/// target-only estimator, index j the pair (0, sites[j]).
struct GramPartial {
  Eigen::MatrixXd full;
  std::vector<Eigen::MatrixXd> folds;
  Eigen::Index n = 0;
  std::vector<Eigen::Index> fold_n;

  GramPartial& operator+=(const GramPartial& other);
};

/// Sums over the influence columns of one site. `columns[j]` holds the
/// site's contribution under pair j or is null when the site is not in it.
GramPartial site_gram_partial(int site_id, const std::vector<const SiteContribution*>& columns,
                              double psi1_target, double p0, int folds, std::uint64_t fold_seed);

/// Q(w) - penalty = w'Gw - 2b'w + c over source weights.
struct GramSums {
  Eigen::MatrixXd G;
  Eigen::VectorXd b;
  double c = 0.0;
};

GramSums gram_from_sums(const Eigen::MatrixXd& sums, Eigen::Index n);

struct SolverOptions {
  int restarts = 10;
  int max_iter = 10000;
  double tol = 1e-8;
  std::uint64_t seed = 12345;
};

struct FederatedWeights {
  Eigen::VectorXd w;  // (w0, w1, ..., wK), w0 is the target slack
  double lambda = 0.0;
  double objective = 0.0;
  bool converged = true;
  int iterations = 0;
};

double penalized_objective(const GramSums& g, const Eigen::VectorXd& delta2, double lambda,
                           const Eigen::VectorXd& w);

/// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);

/// Projected gradient with Armijo backtracking over the simplex on
/// (w0, ..., wK). Flags, rather than throws, non-convergence.
FederatedWeights solve_weights(const GramSums& g, const Eigen::VectorXd& delta2, double lambda,
                               const SolverOptions& options = {});

/// Default candidate grid {0, n^0.3, n^0.4, n^0.45}.
std::vector<double> default_lambda_grid(Eigen::Index n);

/// K-fold cross-validation of the unpenalized held-out loss. EmptyGrid on an
/// empty grid.
double select_lambda(const std::vector<GramSums>& train, const std::vector<GramSums>& held_out,
                     const Eigen::VectorXd& delta2, const std::vector<double>& grid,
                     const SolverOptions& options = {});

struct PairwiseEstimate {
  int k = 0;
  double psi1_pair = 0.0;
  Eigen::VectorXd eif_gram_row;
  double delta_hat = 0.0;
  EstimateReport report;
};

struct FedConfig {
  NuisanceConfig nuisance;
  MeasureKind measure = MeasureKind::RiskRatio;
  std::vector<double> lambda_grid;  // empty: default grid
  int folds = 5;
  std::uint64_t seed = 1;
  SolverOptions solver;
};

struct FwResult {
  std::vector<PairwiseEstimate> pairs;  // pairs[0] is target-only
  GramSums gram;
  FederatedWeights weights;
  EstimateReport target_only;
};

/// Coordinator. Drives nodes through rounds over a transport and keeps only
/// parameters and aggregates.
class Federation {
 public:
  Federation(Transport& transport, std::vector<SiteNode>& nodes, FedConfig config);

  const std::vector<int>& site_ids() const { return ids_; }
  const FedConfig& config() const { return config_; }
  int rounds() const { return round_; }

  /// Sets the resampling plan used for replicate >= 0 requests.
  void set_bootstrap(const BootstrapPlan& plan) { plan_ = plan; }

  /// MR1 on `sites` (target-only AIPW when sites = {0}); replicate -1 is the
  /// original data. With a non-refit plan, replicate fits reuse the original ones.
  EstimateReport estimate_set(const std::vector<int>& sites, int replicate = -1,
                              Method label = Method::MR1);

  /// Target-only estimate plus every pair (0, k); then Gram, lambda and weights.
  FwResult fit_weights();

  NuisanceBundle bundle_for(const std::vector<int>& sites, int replicate);

 private:
  std::vector<Message> exchange(const std::string& kind, const std::vector<int>& recipients, Json payload);
  const LocalModels& local(int site, int replicate);
  const DensityRatioModel& ratio(int k, int replicate);
  const TauModel& tau(const std::vector<int>& sites, int replicate);
  Json replicate_fields(int replicate) const;
  static std::string tag_of(const std::vector<int>& sites);
  int fit_replicate(int replicate) const;

  Transport& transport_;
  std::vector<SiteNode>& nodes_;
  std::vector<int> ids_;
  FedConfig config_;
  BootstrapPlan plan_;
  int round_ = 0;
  std::map<std::pair<int, int>, LocalModels> locals_;
  std::map<std::pair<int, int>, DensityRatioModel> ratios_;
  std::map<std::pair<std::string, int>, TauModel> taus_;
};

/// Nodes for every site of an in-memory data set.
std::vector<SiteNode> make_nodes(const MultiSiteData& data, const NuisanceConfig& config = {});

/// Checks that no message carries row-level data: every kind must be known,
/// payload keys must match its schema and arrays stay below a bound that
/// does not depend on the site sizes. Returns the violations found.
std::vector<std::string> privacy_audit(const std::vector<Message>& transcript, Eigen::Index max_array = 64);

}  // namespace fedcausal
