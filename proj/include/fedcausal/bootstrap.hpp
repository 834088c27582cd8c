#pragma once

#include <cstdint>

#include "fedcausal/core.hpp"

namespace fedcausal {

/// Stratified-by-site nonparametric bootstrap: every site is resampled with
/// replacement to its own size. Replicate b of site k depends only on
/// (seed, b, k), so a site can draw its resample without seeing the others.
struct BootstrapPlan {
  int B = 200;
  std::uint64_t seed = 1;
  // false reuses the original-sample nuisance fits (approximate, fast).
  bool refit = true;

  void validate() const;
};

SiteDataset resample_site(const SiteDataset& site, const BootstrapPlan& plan, int b);

/// PreconditionViolation unless 0 <= b < B.
MultiSiteData bootstrap_replicate(const MultiSiteData& data, const BootstrapPlan& plan, int b);

}  // namespace fedcausal
