#include "fedcausal/bootstrap.hpp"

#include <random>
#include <string>
#include <vector>

#include "fedcausal/rng.hpp"

namespace fedcausal {

void BootstrapPlan::validate() const {
  if (B < 2) throw Error(ErrorCode::ConfigError, "bootstrap needs B >= 2");
}

SiteDataset resample_site(const SiteDataset& site, const BootstrapPlan& plan, int b) {
  if (b < 0 || b >= plan.B) {
    throw Error(ErrorCode::PreconditionViolation,
                "bootstrap index " + std::to_string(b) + " outside [0, " + std::to_string(plan.B) + ")");
  }
  Engine eng(derive_seed(plan.seed, {static_cast<std::uint64_t>(b),
                                     static_cast<std::uint64_t>(site.site_id())}));
  std::uniform_int_distribution<Eigen::Index> pick(0, site.n() - 1);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(site.n()));
  for (auto& r : rows) r = pick(eng);
  return site.take(rows);
}

MultiSiteData bootstrap_replicate(const MultiSiteData& data, const BootstrapPlan& plan, int b) {
  std::vector<SiteDataset> sites;
  for (const auto& [k, site] : data.sites()) sites.push_back(resample_site(site, plan, b));
  return MultiSiteData(std::move(sites));
}

}  // namespace fedcausal
