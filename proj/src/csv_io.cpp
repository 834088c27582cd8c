#include "fedcausal/csv_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <vector>

namespace fedcausal {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void schema_error(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorCode::SchemaError, path.string() + ": " + what);
}

double parse_cell(const std::filesystem::path& path, const std::string& raw, std::size_t line,
                  const std::string& column) {
  const std::string s = trim(raw);
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan") {
    schema_error(path, "missing value at line " + std::to_string(line) + ", column '" + column +
                           "'");
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    schema_error(path, "unparsable value '" + s + "' at line " + std::to_string(line) +
                           ", column '" + column + "'");
  }
  return v;
}

}  // namespace

std::optional<int> site_id_from_filename(const std::filesystem::path& path) {
  static const std::regex pattern(R"(site_(\d+)\.csv)");
  std::smatch m;
  const std::string name = path.filename().string();
  if (std::regex_match(name, m, pattern)) return std::stoi(m[1].str());
  return std::nullopt;
}

SiteDataset read_site_csv(const std::filesystem::path& path, int site_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) schema_error(path, "empty file");
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  if (header.size() < 3) schema_error(path, "header needs y,a,x1[,...]");
  if (header[0] != "y") schema_error(path, "column 1 must be 'y', found '" + header[0] + "'");
  if (header[1] != "a") schema_error(path, "column 2 must be 'a', found '" + header[1] + "'");
  for (std::size_t j = 2; j < header.size(); ++j) {
    const std::string expected = "x" + std::to_string(j - 1);
    if (header[j] != expected) {
      schema_error(path, "column " + std::to_string(j + 1) + " must be '" + expected +
                             "', found '" + header[j] + "'");
    }
  }
  const std::size_t p = header.size() - 2;

  std::vector<double> ys;
  std::vector<int> as;
  std::vector<double> xs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      schema_error(path, "line " + std::to_string(line_no) + " has " +
                             std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(header.size()));
    }
    ys.push_back(parse_cell(path, cells[0], line_no, "y"));
    const double a = parse_cell(path, cells[1], line_no, "a");
    if (a != 0.0 && a != 1.0) {
      schema_error(path, "treatment must be 0/1 at line " + std::to_string(line_no));
    }
    as.push_back(static_cast<int>(a));
    for (std::size_t j = 0; j < p; ++j) xs.push_back(parse_cell(path, cells[j + 2], line_no, header[j + 2]));
  }
  if (ys.empty()) schema_error(path, "no data rows");

  const auto n = static_cast<Eigen::Index>(ys.size());
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), n);
  Eigen::VectorXi a = Eigen::Map<Eigen::VectorXi>(as.data(), n);
  Eigen::MatrixXd x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), n, static_cast<Eigen::Index>(p));
  return SiteDataset(site_id, std::move(y), std::move(x), std::move(a));
}

SiteDataset read_site_csv(const std::filesystem::path& path) {
  const auto id = site_id_from_filename(path);
  if (!id) schema_error(path, "file name must be site_<k>.csv");
  return read_site_csv(path, *id);
}

void write_site_csv(const SiteDataset& site, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "y,a";
  for (Eigen::Index j = 0; j < site.p(); ++j) out << ",x" << (j + 1);
  out << '\n';
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (Eigen::Index i = 0; i < site.n(); ++i) {
    put(site.y()[i]);
    out << ',' << site.a()[i];
    for (Eigen::Index j = 0; j < site.p(); ++j) {
      out << ',';
      put(site.x()(i, j));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

void write_multisite_csv(const MultiSiteData& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string());
  for (const auto& [k, site] : data.sites()) {
    write_site_csv(site, dir / ("site_" + std::to_string(k) + ".csv"));
  }
}

}  // namespace fedcausal
