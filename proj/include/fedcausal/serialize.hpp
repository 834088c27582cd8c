#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

#include "fedcausal/core.hpp"
#include "fedcausal/estimators.hpp"
#include "fedcausal/glm.hpp"
#include "fedcausal/nuisance.hpp"

// JSON conversions. Doubles are written in shortest round-trip form, so a
// dump/parse cycle reproduces every value bit for bit.
namespace fedcausal {

using Json = nlohmann::json;

Json to_json(const Eigen::VectorXd& v);
Json to_json(const Eigen::MatrixXd& m);
Eigen::VectorXd vector_from_json(const Json& j);
Eigen::MatrixXd matrix_from_json(const Json& j);

Json to_json(const FeatureMap& f);
FeatureMap feature_map_from_json(const Json& j);

Json to_json(const GlmModel& m);
GlmModel glm_from_json(const Json& j);

Json to_json(const DensityRatioModel& m);
DensityRatioModel density_ratio_from_json(const Json& j);

Json to_json(const TauModel& m);
TauModel tau_from_json(const Json& j);

Json to_json(const VarianceModel& m);
VarianceModel variance_from_json(const Json& j);

Json to_json(const LocalModels& m);
LocalModels local_models_from_json(const Json& j);

Json to_json(const NuisanceBundle& b);
NuisanceBundle bundle_from_json(const Json& j);

Json to_json(const LogisticStats& s);
LogisticStats logistic_stats_from_json(const Json& j);

Json to_json(const LinearStats& s);
LinearStats linear_stats_from_json(const Json& j);

Json to_json(const SiteSums& s);
SiteSums site_sums_from_json(const Json& j);

Json to_json(const PointEstimate& p);
PointEstimate point_from_json(const Json& j);

Json to_json(const EstimateReport& r);
EstimateReport report_from_json(const Json& j);

void write_json(const Json& j, const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

/// Single-column CSV with header `phi`.
void write_influence_csv(const InfluenceSample& s, const std::filesystem::path& path);

/// 64-bit FNV-1a digest in hex, used for audit fingerprints.
std::string fnv1a_hex(const std::string& text);

}  // namespace fedcausal
