#pragma once

#include <filesystem>
#include <optional>
#include <span>

#include "fedcausal/core.hpp"

namespace fedcausal {

/// Site id from a `site_<k>.csv` file name, if it follows the convention.
std::optional<int> site_id_from_filename(const std::filesystem::path& path);

/// Reads a per-site CSV with header `y,a,x1,...,xp`. Empty cells and
/// unparsable values raise SchemaError naming the row and column.
SiteDataset read_site_csv(const std::filesystem::path& path, int site_id);

/// Same, taking the site id from the file name.
SiteDataset read_site_csv(const std::filesystem::path& path);

void write_site_csv(const SiteDataset& site, const std::filesystem::path& path);

/// Writes one `site_<k>.csv` per site into `dir`.
void write_multisite_csv(const MultiSiteData& data, const std::filesystem::path& dir);

}  // namespace fedcausal
