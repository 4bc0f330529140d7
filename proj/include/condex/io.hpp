#pragma once

// CSV ingestion and export, JSON (de)serialization of fitted models and
// deformations, and a data fingerprint for provenance records.

#include "condex/core.hpp"
#include "condex/deform.hpp"
#include "condex/likelihood.hpp"
#include "condex/margins.hpp"

#include "json.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace condex::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Input error carrying a file position (1-based; 0 when unknown).
class ParseError : public InvalidArgument {
 public:
  ParseError(const std::string& file, int line, int column, const std::string& what)
      : InvalidArgument(file + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

// ---- numbers ---------------------------------------------------------------

/// Shortest round-trip decimal form.
inline std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(out);
}

// ---- CSV -----------------------------------------------------------------------

struct CsvCell {
  std::string text;
  int column = 1;  // 1-based character column of the cell start
};

struct CsvRow {
  std::vector<CsvCell> cells;
  int line = 0;
};

/// Comma-separated rows without quoting; blank lines are skipped.
inline std::vector<CsvRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, 0, "cannot open file");
  std::vector<CsvRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    CsvRow row;
    row.line = lineno;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto end = comma == std::string::npos ? line.size() : comma;
      std::string cell = line.substr(start, end - start);
      const auto a = cell.find_first_not_of(" \t");
      const auto b = cell.find_last_not_of(" \t");
      cell = a == std::string::npos ? std::string() : cell.substr(a, b - a + 1);
      row.cells.push_back({cell, static_cast<int>(start) + 1});
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Locations file: header `site_id,x,y`, one row per site.
inline std::pair<std::vector<std::string>, Locations> read_locations(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty()) throw ParseError(path, 0, 0, "empty locations file");
  const auto& h = rows.front();
  if (h.cells.size() != 3 || h.cells[0].text != "site_id" || h.cells[1].text != "x" || h.cells[2].text != "y")
    throw ParseError(path, h.line, 1, "expected header 'site_id,x,y'");
  std::vector<std::string> ids;
  Locations locs(static_cast<Eigen::Index>(rows.size() - 1), 2);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.cells.size() != 3)
      throw ParseError(path, row.line, 1, "expected 3 fields, found " + std::to_string(row.cells.size()));
    if (row.cells[0].text.empty()) throw ParseError(path, row.line, row.cells[0].column, "empty site id");
    ids.push_back(row.cells[0].text);
    for (int c = 1; c <= 2; ++c) {
      double v;
      if (!parse_double(row.cells[static_cast<std::size_t>(c)].text, v))
        throw ParseError(path, row.line, row.cells[static_cast<std::size_t>(c)].column,
                         "invalid coordinate '" + row.cells[static_cast<std::size_t>(c)].text + "'");
      locs(static_cast<Eigen::Index>(r - 1), c - 1) = v;
    }
  }
  return {ids, locs};
}

/// Observations file: header of site ids (optionally preceded by `time`),
/// one row per replicate. Columns are matched to `site_ids` by name.
inline SpatialDataset read_dataset(const std::string& locations_path, const std::string& observations_path,
                                   MarginTag margin = MarginTag::raw) {
  auto [ids, locs] = read_locations(locations_path);
  const auto rows = read_csv(observations_path);
  if (rows.empty()) throw ParseError(observations_path, 0, 0, "empty observations file");
  const auto& h = rows.front();
  const bool has_time = !h.cells.empty() && h.cells[0].text == "time";
  const std::size_t first = has_time ? 1 : 0;
  std::vector<int> col_to_site;
  std::vector<bool> seen(ids.size(), false);
  for (std::size_t c = first; c < h.cells.size(); ++c) {
    const auto it = std::find(ids.begin(), ids.end(), h.cells[c].text);
    if (it == ids.end()) throw ParseError(observations_path, h.line, h.cells[c].column, "unknown site id '" + h.cells[c].text + "'");
    const auto s = static_cast<std::size_t>(it - ids.begin());
    if (seen[s]) throw ParseError(observations_path, h.line, h.cells[c].column, "duplicated site id '" + h.cells[c].text + "'");
    seen[s] = true;
    col_to_site.push_back(static_cast<int>(s));
  }
  for (std::size_t s = 0; s < ids.size(); ++s)
    if (!seen[s]) throw ParseError(observations_path, h.line, 1, "site '" + ids[s] + "' has no observation column");

  SpatialDataset data;
  data.locations = locs;
  data.site_ids = ids;
  data.margin = margin;
  data.observations.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.cells.size() != h.cells.size())
      throw ParseError(observations_path, row.line, 1,
                       "expected " + std::to_string(h.cells.size()) + " fields, found " + std::to_string(row.cells.size()));
    if (has_time) data.replicate_times.push_back(row.cells[0].text);
    for (std::size_t c = first; c < row.cells.size(); ++c) {
      const auto& cell = row.cells[c];
      if (cell.text.empty()) throw ParseError(observations_path, row.line, cell.column, "missing value");
      double v;
      if (!parse_double(cell.text, v)) throw ParseError(observations_path, row.line, cell.column, "invalid number '" + cell.text + "'");
      data.observations(static_cast<Eigen::Index>(r - 1), col_to_site[c - first]) = v;
    }
  }
  validate(data);
  return data;
}

/// CSV text of a matrix with the given header.
inline std::string matrix_csv(const std::vector<std::string>& header, const MatrixXd& m) {
  require(header.size() == static_cast<std::size_t>(m.cols()), "header width does not match the matrix");
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(i, c));
    }
    out += '\n';
  }
  return out;
}

inline std::string locations_csv(const std::vector<std::string>& ids, const Locations& locs) {
  std::string out = "site_id,x,y\n";
  for (Eigen::Index i = 0; i < locs.rows(); ++i)
    out += ids[static_cast<std::size_t>(i)] + "," + format_double(locs(i, 0)) + "," + format_double(locs(i, 1)) + "\n";
  return out;
}

inline std::string observations_csv(const SpatialDataset& data) {
  std::vector<std::string> header = data.site_ids;
  if (header.empty())
    for (int j = 0; j < data.num_sites(); ++j) header.push_back("s" + std::to_string(j));
  if (data.replicate_times.empty()) return matrix_csv(header, data.observations);
  std::string out = "time";
  for (const auto& h : header) out += "," + h;
  out += '\n';
  for (int i = 0; i < data.num_replicates(); ++i) {
    out += data.replicate_times[static_cast<std::size_t>(i)];
    for (int c = 0; c < data.num_sites(); ++c) out += "," + format_double(data.observations(i, c));
    out += '\n';
  }
  return out;
}

// ---- fingerprint ---------------------------------------------------------------

/// FNV-1a 64-bit hash.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json data_fingerprint(const SpatialDataset& data) {
  std::uint64_t h = fnv1a(data.locations.data(), sizeof(double) * static_cast<std::size_t>(data.locations.size()));
  h = fnv1a(data.observations.data(), sizeof(double) * static_cast<std::size_t>(data.observations.size()), h);
  return {{"replicates", data.num_replicates()}, {"sites", data.num_sites()}, {"hash", hex64(h)}};
}

// ---- JSON ------------------------------------------------------------------------

inline json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw InvalidArgument(what + ": expected an array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  const auto m = n ? static_cast<Eigen::Index>(j[0].size()) : 0;
  MatrixXd out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_array() || static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != m)
      throw InvalidArgument(what + ": ragged matrix");
    for (Eigen::Index k = 0; k < m; ++k) out(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  }
  return out;
}

inline json params_json(const ConditionalModelParams& p) {
  json z = {{"variant", to_string(p.z.variant)}, {"mu", p.z.mu},         {"sigma", p.z.sigma},
            {"phi", p.z.phi},                    {"nu", p.z.nu},         {"delta1", p.z.delta1},
            {"delta2", p.z.delta2}};
  if (p.z.empirical_means) z["empirical_means"] = matrix_json(*p.z.empirical_means);
  return {{"alpha", {{"Delta", p.alpha.Delta}, {"lambda", p.alpha.lambda}, {"kappa", p.alpha.kappa}}},
          {"b", {{"variant", to_string(p.b.variant)}, {"beta", p.b.beta}, {"zeta", p.b.zeta}}},
          {"residual", z}};
}

inline ConditionalModelParams params_from_json(const json& j) {
  ConditionalModelParams p;
  const auto& a = j.at("alpha");
  p.alpha = {a.at("Delta").get<double>(), a.at("lambda").get<double>(), a.at("kappa").get<double>()};
  const auto& b = j.at("b");
  p.b = {b_variant_from_string(b.at("variant").get<std::string>()), b.at("beta").get<double>(), b.at("zeta").get<double>()};
  const auto& z = j.at("residual");
  p.z.variant = residual_variant_from_string(z.at("variant").get<std::string>());
  p.z.mu = z.at("mu").get<double>();
  p.z.sigma = z.at("sigma").get<double>();
  p.z.phi = z.at("phi").get<double>();
  p.z.nu = z.at("nu").get<double>();
  p.z.delta1 = z.at("delta1").get<double>();
  p.z.delta2 = z.at("delta2").get<double>();
  if (z.contains("empirical_means")) p.z.empirical_means = matrix_from_json(z.at("empirical_means"), "empirical_means");
  validate(p);
  return p;
}

inline json fitted_json(const FittedModel& f) {
  json profile = json::array();
  for (const auto& [D, v] : f.info.delta_profile) profile.push_back({{"Delta", D}, {"nll", v}});
  return {{"schema_version", kSchemaVersion},
          {"params", params_json(f.params)},
          {"threshold_u", f.threshold_u},
          {"threshold_quantile", f.threshold_quantile},
          {"locations", matrix_json(f.locations)},
          {"fit_info",
           {{"nll", f.info.nll},
            {"evaluations", f.info.evaluations},
            {"iterations", f.info.iterations},
            {"converged", f.info.converged},
            {"exceedances", f.info.exceedances},
            {"delta_profile", profile}}}};
}

inline FittedModel fitted_from_json(const json& j) {
  if (j.value("schema_version", 0) != kSchemaVersion) throw InvalidArgument("unsupported fitted-model schema version");
  FittedModel f;
  f.params = params_from_json(j.at("params"));
  f.threshold_u = j.at("threshold_u").get<double>();
  f.threshold_quantile = j.value("threshold_quantile", 0.0);
  f.locations = matrix_from_json(j.at("locations"), "locations");
  const auto& info = j.at("fit_info");
  f.info.nll = info.at("nll").get<double>();
  f.info.evaluations = info.value("evaluations", 0);
  f.info.iterations = info.value("iterations", 0);
  f.info.converged = info.value("converged", false);
  f.info.exceedances = info.value("exceedances", std::vector<int>{});
  for (const auto& e : info.value("delta_profile", json::array()))
    f.info.delta_profile.emplace_back(e.at("Delta").get<double>(), e.at("nll").get<double>());
  return f;
}

inline json transform_json(const MarginalTransform& t) {
  return {{"schema_version", kSchemaVersion}, {"sorted_values", t.sorted_values}, {"laplace_values", t.laplace_values}};
}

inline MarginalTransform transform_from_json(const json& j) {
  MarginalTransform t;
  t.sorted_values = j.at("sorted_values").get<std::vector<std::vector<double>>>();
  t.laplace_values = j.at("laplace_values").get<std::vector<std::vector<double>>>();
  require(t.sorted_values.size() == t.laplace_values.size(), "transform: site count mismatch");
  return t;
}

inline json deformation_json(const DeformationParams& p) {
  return {{"schema_version", kSchemaVersion},
          {"kappa_d", p.kappa_d},
          {"lambda_d", p.lambda_d},
          {"psi", p.psi},
          {"anchor_indices", p.anchor_indices},
          {"anchors", matrix_json(p.anchors)},
          {"omega", matrix_json(p.omega)}};
}

inline DeformationParams deformation_from_json(const json& j) {
  DeformationParams p;
  p.kappa_d = j.at("kappa_d").get<double>();
  p.lambda_d = j.at("lambda_d").get<double>();
  p.psi = j.at("psi").get<double>();
  p.anchor_indices = j.at("anchor_indices").get<std::vector<int>>();
  p.anchors = matrix_from_json(j.at("anchors"), "anchors");
  p.omega = matrix_from_json(j.at("omega"), "omega");
  validate(p);
  return p;
}

// ---- files ------------------------------------------------------------------------

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const std::string& path) {
  const auto text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line/column
    int line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(path, line, col, "invalid JSON");
  }
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

}  // namespace condex::io
