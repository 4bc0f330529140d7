#pragma once

// Dependence summaries and model checks: empirical chi, Kendall's tau
// independence check on residuals, the stationary bootstrap, and the
// expected number of exceedances given at least one.

#include "condex/core.hpp"
#include "condex/likelihood.hpp"
#include "condex/margins.hpp"
#include "condex/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace condex {

// ---- chi ---------------------------------------------------------------------

struct ChiEstimate {
  int i = 0;
  int j = 0;
  double q = 0.0;
  double chi_hat = 0.0;
  int n_joint = 0;
  bool low_count = false;  // (1 - q) n < 5
};

/// Empirical P{F_i > q, F_j > q} / (1 - q) with F the rank/(n+1) transform.
inline ChiEstimate chi_q(const SpatialDataset& data, int i, int j, double q) {
  require(q > 0.0 && q < 1.0, "chi_q: q must lie in (0, 1)");
  require(i >= 0 && j >= 0 && i < data.num_sites() && j < data.num_sites(), "chi_q: site index out of range");
  const int n = data.num_replicates();
  const auto ri = average_ranks(data.observations.col(i));
  const auto rj = average_ranks(data.observations.col(j));
  ChiEstimate e{i, j, q, 0.0, 0, (1.0 - q) * n < 5.0};
  for (int t = 0; t < n; ++t)
    if (ri[static_cast<std::size_t>(t)] / (n + 1.0) > q && rj[static_cast<std::size_t>(t)] / (n + 1.0) > q) ++e.n_joint;
  e.chi_hat = e.n_joint / (n * (1.0 - q));
  return e;
}

// ---- Kendall's tau -------------------------------------------------------------

/// Kendall's tau-b.
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "kendall_tau: need two equal-length samples of size >= 2");
  long long concordant = 0, discordant = 0, tie_x = 0, tie_y = 0;
  for (std::size_t a = 0; a < x.size(); ++a)
    for (std::size_t b = a + 1; b < x.size(); ++b) {
      const double dx = x[a] - x[b];
      const double dy = y[a] - y[b];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++tie_x;
      } else if (dy == 0.0) {
        ++tie_y;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  const double n1 = static_cast<double>(concordant + discordant + tie_y);
  const double n2 = static_cast<double>(concordant + discordant + tie_x);
  if (n1 == 0.0 || n2 == 0.0) return 0.0;
  return static_cast<double>(concordant - discordant) / std::sqrt(n1 * n2);
}

struct KendallRow {
  int site = 0;
  int n = 0;
  double tau_mean = 0.0;      // X(s_j) vs mean of Z^j over sites
  double tau_variance = 0.0;  // X(s_j) vs variance of Z^j over sites
  bool mean_inside = true;
  bool variance_inside = true;
};

struct KendallCheck {
  std::vector<KendallRow> rows;
  double band_lo = 0.0;  // 2.5% point of tau under independence
  double band_hi = 0.0;  // 97.5% point
  int band_n = 0;        // sample size used for the band
};

/// Central 95% band of Kendall's tau between independent samples of size n.
inline std::pair<double, double> kendall_null_band(int n, int samples, std::uint64_t seed) {
  require(n >= 2 && samples >= 10, "kendall_null_band: need n >= 2 and samples >= 10");
  Rng gen = make_rng(seed);
  std::uniform_real_distribution<double> unif;
  std::vector<double> taus(static_cast<std::size_t>(samples));
  std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
  for (auto& t : taus) {
    for (int i = 0; i < n; ++i) {
      x[static_cast<std::size_t>(i)] = unif(gen);
      y[static_cast<std::size_t>(i)] = unif(gen);
    }
    t = kendall_tau(x, y);
  }
  std::sort(taus.begin(), taus.end());
  auto at = [&](double p) { return taus[static_cast<std::size_t>(std::floor(p * (samples - 1)))]; };
  return {at(0.025), at(0.975)};
}

/// Kendall's tau between the conditioning value and the mean (and variance)
/// of the residual vector, per conditioning site, against a Monte Carlo band
/// at the average exceedance count.
inline KendallCheck kendall_independence_check(const std::vector<SiteResiduals>& residuals, int null_samples,
                                               std::uint64_t seed) {
  KendallCheck out;
  double n_total = 0.0;
  int used = 0;
  for (const auto& r : residuals) {
    if (r.rows.size() < 3) continue;
    std::vector<double> cond(r.cond.data(), r.cond.data() + r.cond.size());
    std::vector<double> mean(r.rows.size()), var(r.rows.size());
    const auto d = r.z.cols();
    for (Eigen::Index i = 0; i < r.z.rows(); ++i) {
      double s = 0.0, s2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        if (k == r.site) continue;
        s += r.z(i, k);
        s2 += r.z(i, k) * r.z(i, k);
      }
      const double m = s / static_cast<double>(d - 1);
      mean[static_cast<std::size_t>(i)] = m;
      var[static_cast<std::size_t>(i)] = s2 / static_cast<double>(d - 1) - m * m;
    }
    KendallRow row;
    row.site = r.site;
    row.n = static_cast<int>(r.rows.size());
    row.tau_mean = kendall_tau(cond, mean);
    row.tau_variance = kendall_tau(cond, var);
    out.rows.push_back(row);
    n_total += row.n;
    ++used;
  }
  require(used > 0, "kendall check: no site has at least three exceedances");
  out.band_n = static_cast<int>(std::lround(n_total / used));
  std::tie(out.band_lo, out.band_hi) = kendall_null_band(out.band_n, null_samples, seed);
  for (auto& row : out.rows) {
    row.mean_inside = row.tau_mean >= out.band_lo && row.tau_mean <= out.band_hi;
    row.variance_inside = row.tau_variance >= out.band_lo && row.tau_variance <= out.band_hi;
  }
  return out;
}

inline KendallCheck kendall_independence_check(const SpatialDataset& data, const FittedModel& fitted,
                                               int null_samples = 10000, std::uint64_t seed = 1) {
  return kendall_independence_check(extract_residuals(data, fitted), null_samples, seed);
}

// ---- stationary bootstrap -----------------------------------------------------------

struct BootstrapIndices {
  std::vector<int> indices;        // length n, values in [0, n)
  std::vector<int> block_lengths;  // drawn lengths; the last one may be cut short in `indices`
};

/// Politis-Romano stationary bootstrap: uniform block starts, geometric block
/// lengths with mean `mean_block`, wrapping around the end of the series.
inline BootstrapIndices stationary_bootstrap(int n, double mean_block, std::uint64_t seed) {
  require(n >= 1, "stationary_bootstrap: n must be positive");
  require(mean_block >= 1.0, "stationary_bootstrap: mean block length must be >= 1");
  Rng gen = make_rng(seed);
  std::uniform_int_distribution<int> start(0, n - 1);
  std::geometric_distribution<int> extra(1.0 / mean_block);
  BootstrapIndices out;
  out.indices.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(out.indices.size()) < n) {
    const int s = start(gen);
    const int len = 1 + extra(gen);
    out.block_lengths.push_back(len);
    for (int k = 0; k < len && static_cast<int>(out.indices.size()) < n; ++k) out.indices.push_back((s + k) % n);
  }
  return out;
}

struct BootstrapResult {
  std::vector<std::string> names;  // free parameter names
  MatrixXd estimates;              // replicates x parameters
  std::vector<bool> converged;
};

/// Refits the model on stationary-bootstrap resamples of whole replicate
/// rows, each fit started from `start` (typically the full-data estimate).
inline BootstrapResult bootstrap_fit(const SpatialDataset& data, double u, const FitConfig& cfg,
                                     const ConditionalModelParams& start, int replicates, double mean_block,
                                     std::uint64_t seed) {
  require(replicates >= 1, "bootstrap_fit: need at least one replicate");
  FitConfig c = cfg;
  c.start = start;
  c.n_starts = 1;
  const ParamCodec codec(start, cfg.fixed);
  BootstrapResult out;
  out.names = codec.names();
  out.estimates.resize(replicates, codec.size());
  out.converged.assign(static_cast<std::size_t>(replicates), false);
  for (int b = 0; b < replicates; ++b) {
    const auto idx = stationary_bootstrap(data.num_replicates(), mean_block, seed + static_cast<std::uint64_t>(b));
    const auto fitted = fit(select_replicates(data, idx.indices), u, c);
    for (int k = 0; k < codec.size(); ++k)
      out.estimates(b, k) = parameter_value(fitted.params, out.names[static_cast<std::size_t>(k)]);
    out.converged[static_cast<std::size_t>(b)] = fitted.info.converged;
  }
  return out;
}

// ---- expected exceedances --------------------------------------------------------

struct ExceedanceRow {
  double q = 0.0;
  double v = 0.0;
  double estimate = 0.0;  // E[#{j : X_j > v} | max > v], model
  double se = 0.0;
  int empirical_n = 0;    // replicates with max > v
  std::optional<double> empirical;
  std::optional<double> empirical_lo;  // normal-approximation 95% interval
  std::optional<double> empirical_hi;
};

/// Data counterpart of the expected count: mean count among replicates whose
/// maximum over `sites` exceeds v.
inline void fill_empirical(ExceedanceRow& row, const SpatialDataset& data, const std::vector<int>& sites) {
  std::vector<double> counts;
  for (int i = 0; i < data.num_replicates(); ++i) {
    int c = 0;
    for (int s : sites) c += data.observations(i, s) > row.v;
    if (c > 0) counts.push_back(c);
  }
  row.empirical_n = static_cast<int>(counts.size());
  if (counts.empty()) return;
  const double n = static_cast<double>(counts.size());
  const double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / n;
  row.empirical = mean;
  if (counts.size() >= 2) {
    double ss = 0.0;
    for (double c : counts) ss += (c - mean) * (c - mean);
    const double half = 1.96 * std::sqrt(ss / (n - 1.0) / n);
    row.empirical_lo = mean - half;
    row.empirical_hi = mean + half;
  }
}

template <ComponentSampler S>
std::vector<ExceedanceRow> expected_exceedances(const S& sampler, const std::vector<double>& q_levels, int nsims,
                                                std::uint64_t seed, int workers = 1) {
  std::vector<ExceedanceRow> out;
  for (std::size_t k = 0; k < q_levels.size(); ++k) {
    ExceedanceRow row;
    row.q = q_levels[k];
    row.v = laplace_threshold(row.q);
    const auto s = draw_importance_sample(sampler, row.v, nsims, seed + 7919 * static_cast<std::uint64_t>(k), workers);
    const double v = row.v;
    const auto e = importance_estimate(s, [v](const RowVectorXd& x) { return static_cast<double>((x.array() > v).count()); });
    row.estimate = e.value;
    row.se = e.se;
    out.push_back(row);
  }
  return out;
}

/// Model curve over q_levels, with the empirical counterpart when data are
/// given. Levels below the fitted threshold are rejected.
inline std::vector<ExceedanceRow> expected_exceedances(const FittedModel& fitted, const std::vector<int>& sites,
                                                       const std::vector<double>& q_levels, int nsims,
                                                       std::uint64_t seed, const SpatialDataset* data = nullptr,
                                                       int workers = 1) {
  for (double q : q_levels)
    require(laplace_threshold(q) >= fitted.threshold_u - 1e-12, "quantile level below the fitted threshold");
  auto rows = expected_exceedances(ModelComponentSampler(fitted, sites), q_levels, nsims, seed, workers);
  if (data)
    for (auto& r : rows) fill_empirical(r, *data, sites);
  return rows;
}

// ---- model versus data -----------------------------------------------------------------

struct PairOverlay {
  std::vector<std::pair<int, int>> pairs;
  MatrixXd observed;   // replicates with X(s_j) > u; column 2p, 2p+1 for pair p
  MatrixXd simulated;  // model draws given X(s_j) > u, same layout
};

/// Observed and simulated values of site pairs given an exceedance at the
/// conditioning site j, for overlay plots.
inline PairOverlay model_vs_data_pairs(const FittedModel& fitted, const SpatialDataset& data, int j,
                                       const std::vector<std::pair<int, int>>& pairs, int nsims, std::uint64_t seed) {
  require(j >= 0 && j < data.num_sites(), "conditioning site out of range");
  PairOverlay out;
  out.pairs = pairs;
  if (pairs.empty()) return out;
  std::vector<int> cols;
  for (const auto& [a, b] : pairs) {
    require(a != j && b != j, "the conditioning site must not appear in the pairs");
    require(a >= 0 && b >= 0 && a < data.num_sites() && b < data.num_sites(), "pair site out of range");
    cols.push_back(a);
    cols.push_back(b);
  }
  std::vector<int> rows;
  for (int i = 0; i < data.num_replicates(); ++i)
    if (data.observations(i, j) > fitted.threshold_u) rows.push_back(i);
  out.observed.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out.observed(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = data.observations(rows[r], cols[c]);
  const auto sim = sim_given_site(fitted, fitted.locations.row(j), select_rows(fitted.locations, cols),
                                  fitted.threshold_u, nsims, seed);
  out.simulated = sim.x;
  return out;
}

/// Two-sample energy-distance permutation test; returns the p-value.
inline double energy_test(const MatrixXd& a, const MatrixXd& b, int permutations, std::uint64_t seed) {
  require(a.cols() == b.cols() && a.rows() >= 2 && b.rows() >= 2, "energy_test: incompatible samples");
  const auto na = a.rows(), nb = b.rows(), n = na + nb;
  MatrixXd all(n, a.cols());
  all << a, b;
  MatrixXd dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = i; k < n; ++k) dist(i, k) = dist(k, i) = (all.row(i) - all.row(k)).norm();
  auto stat = [&](const std::vector<int>& lab) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < n; ++k) {
        const int li = lab[static_cast<std::size_t>(i)], lk = lab[static_cast<std::size_t>(k)];
        if (li != lk) ab += dist(i, k);
        else if (li == 0) aa += dist(i, k);
        else bb += dist(i, k);
      }
    const double dna = static_cast<double>(na), dnb = static_cast<double>(nb);
    return (dna * dnb / (dna + dnb)) * (ab / (dna * dnb) - aa / (dna * dna) - bb / (dnb * dnb));
  };
  std::vector<int> lab(static_cast<std::size_t>(n), 1);
  std::fill(lab.begin(), lab.begin() + na, 0);
  const double observed = stat(lab);
  Rng gen = make_rng(seed);
  int ge = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(lab.begin(), lab.end(), gen);
    if (stat(lab) >= observed) ++ge;
  }
  return (ge + 1.0) / (permutations + 1.0);
}

}  // namespace condex
