#pragma once

// Spatial datasets and the empirical marginal transform to and from the
// standard Laplace scale.

#include "condex/core.hpp"
#include "condex/distributions.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace condex {

enum class MarginTag { raw, laplace, exponential };

inline std::string to_string(MarginTag t) {
  switch (t) {
    case MarginTag::raw: return "raw";
    case MarginTag::laplace: return "laplace";
    case MarginTag::exponential: return "exponential";
  }
  return "raw";
}

inline MarginTag margin_tag_from_string(const std::string& s) {
  if (s == "raw") return MarginTag::raw;
  if (s == "laplace") return MarginTag::laplace;
  if (s == "exponential") return MarginTag::exponential;
  throw InvalidArgument("unknown margin tag '" + s + "'");
}

/// Site coordinates plus a replicates-by-sites observation matrix.
struct SpatialDataset {
  Locations locations;        // d x 2
  MatrixXd observations;      // n x d
  MarginTag margin = MarginTag::raw;
  std::vector<std::string> site_ids;         // optional, size d when present
  std::vector<std::string> replicate_times;  // optional, size n when present

  int num_sites() const { return static_cast<int>(locations.rows()); }
  int num_replicates() const { return static_cast<int>(observations.rows()); }
  Point location(int j) const { return locations.row(j); }
};

inline void validate(const SpatialDataset& data) {
  const int d = data.num_sites();
  require(d >= 2, "dataset needs at least two sites");
  require(data.num_replicates() >= 1, "dataset needs at least one replicate");
  require(data.observations.cols() == d, "observation columns do not match the number of sites");
  require(data.site_ids.empty() || static_cast<int>(data.site_ids.size()) == d, "site id count mismatch");
  require(data.replicate_times.empty() || static_cast<int>(data.replicate_times.size()) == data.num_replicates(),
          "replicate time count mismatch");
  require(data.locations.allFinite(), "site coordinates must be finite");
  require(data.observations.allFinite(), "observations must be finite (missing values are not supported)");
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      require(data.location(i) != data.location(j),
              "duplicated location for sites " + std::to_string(i) + " and " + std::to_string(j));
}

/// Rows of `data` selected by `rows`, keeping coordinates and ids.
inline SpatialDataset select_replicates(const SpatialDataset& data, const std::vector<int>& rows) {
  SpatialDataset out;
  out.locations = data.locations;
  out.margin = data.margin;
  out.site_ids = data.site_ids;
  out.observations.resize(static_cast<Eigen::Index>(rows.size()), data.observations.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < data.num_replicates(), "replicate index out of range");
    out.observations.row(static_cast<Eigen::Index>(i)) = data.observations.row(rows[i]);
    if (!data.replicate_times.empty()) out.replicate_times.push_back(data.replicate_times[rows[i]]);
  }
  return out;
}

/// Average ranks (1-based) of `x`; tied values share the mean of their ranks.
inline std::vector<double> average_ranks(const Eigen::Ref<const VectorXd>& x) {
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t k = i;
    while (k + 1 < n && x[order[k + 1]] == x[order[i]]) ++k;
    const double r = 0.5 * static_cast<double>(i + k) + 1.0;
    for (std::size_t t = i; t <= k; ++t) ranks[order[t]] = r;
    i = k + 1;
  }
  return ranks;
}

/// Per-site empirical transform: sorted sample values paired with their
/// Laplace-scale images rank/(n+1) -> F_L^{-1}. Monotone by construction.
struct MarginalTransform {
  std::vector<std::vector<double>> sorted_values;   // per site, ascending
  std::vector<std::vector<double>> laplace_values;  // per site, matching images

  int num_sites() const { return static_cast<int>(sorted_values.size()); }
};

struct BackTransformed {
  std::vector<double> values;
  int clamped = 0;  // number of inputs outside the observed Laplace range
};

namespace detail {

inline void build_site_transform(const Eigen::Ref<const VectorXd>& column, std::vector<double>& sorted,
                                 std::vector<double>& lap, VectorXd& transformed) {
  const auto n = column.size();
  const auto ranks = average_ranks(column);
  transformed.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    transformed[i] = laplace_quantile(ranks[static_cast<std::size_t>(i)] / static_cast<double>(n + 1));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return column[a] < column[b]; });
  sorted.resize(static_cast<std::size_t>(n));
  lap.resize(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted[k] = column[order[k]];
    lap[k] = transformed[order[k]];
  }
}

}  // namespace detail

/// Raw -> standard Laplace margins through the empirical distribution
/// function at each site.
inline std::pair<SpatialDataset, MarginalTransform> to_laplace(const SpatialDataset& data) {
  validate(data);
  require(data.margin == MarginTag::raw, "to_laplace expects raw-scale data");
  const int d = data.num_sites();
  SpatialDataset out = data;
  out.margin = MarginTag::laplace;
  MarginalTransform t;
  t.sorted_values.resize(static_cast<std::size_t>(d));
  t.laplace_values.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    const auto col = data.observations.col(j);
    require(col.maxCoeff() > col.minCoeff(), "site " + std::to_string(j) + " is constant; cannot rank-transform");
    VectorXd transformed;
    detail::build_site_transform(col, t.sorted_values[static_cast<std::size_t>(j)],
                                 t.laplace_values[static_cast<std::size_t>(j)], transformed);
    out.observations.col(j) = transformed;
  }
  return {std::move(out), std::move(t)};
}

/// Laplace scale -> raw scale at `site` by linear interpolation between the
/// empirical quantiles. Inputs beyond the observed range are clamped to the
/// sample extremes and counted.
inline BackTransformed from_laplace(std::span<const double> values, int site, const MarginalTransform& t) {
  require(site >= 0 && site < t.num_sites(), "from_laplace: site index out of range");
  const auto& xs = t.sorted_values[static_cast<std::size_t>(site)];
  const auto& ls = t.laplace_values[static_cast<std::size_t>(site)];
  BackTransformed out;
  out.values.reserve(values.size());
  for (double y : values) {
    if (y <= ls.front()) {
      if (y < ls.front()) ++out.clamped;
      out.values.push_back(xs.front());
      continue;
    }
    if (y >= ls.back()) {
      if (y > ls.back()) ++out.clamped;
      out.values.push_back(xs.back());
      continue;
    }
    const auto hi = static_cast<std::size_t>(std::upper_bound(ls.begin(), ls.end(), y) - ls.begin());
    const std::size_t lo = hi - 1;
    if (ls[lo] == y) {
      out.values.push_back(xs[lo]);
      continue;
    }
    const double w = (y - ls[lo]) / (ls[hi] - ls[lo]);
    out.values.push_back(xs[lo] + w * (xs[hi] - xs[lo]));
  }
  return out;
}

}  // namespace condex
