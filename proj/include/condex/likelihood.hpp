#pragma once

// Composite-likelihood inference for the conditional model, pairwise fits,
// residual extraction and the residual-field refit with empirical means.

#include "condex/core.hpp"
#include "condex/depmodel.hpp"
#include "condex/distributions.hpp"
#include "condex/margins.hpp"
#include "condex/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace condex {

// ---- exceedance bookkeeping ----------------------------------------------

/// Replicates in which `site` exceeds the threshold, split into the
/// conditioning value and the values at every other site.
struct ExceedanceSet {
  int site = 0;
  std::vector<int> others;  // site indices, ascending, excluding `site`
  std::vector<int> rows;    // replicate indices
  VectorXd cond;            // X(s_site) per replicate
  MatrixXd rest;            // X(s_k), k in others, per replicate
  SiteDistances dist;       // from the conditioning site to, and among, `others`
};

inline ExceedanceSet exceedance_set(const SpatialDataset& data, int site, double u) {
  const int d = data.num_sites();
  require(site >= 0 && site < d, "site index out of range");
  ExceedanceSet e;
  e.site = site;
  for (int k = 0; k < d; ++k)
    if (k != site) e.others.push_back(k);
  for (int i = 0; i < data.num_replicates(); ++i)
    if (data.observations(i, site) > u) e.rows.push_back(i);
  const auto n = static_cast<Eigen::Index>(e.rows.size());
  e.cond.resize(n);
  e.rest.resize(n, d - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = e.rows[static_cast<std::size_t>(i)];
    e.cond[i] = data.observations(r, site);
    for (int k = 0; k < d - 1; ++k) e.rest(i, k) = data.observations(r, e.others[static_cast<std::size_t>(k)]);
  }
  e.dist = site_distances(select_rows(data.locations, e.others), data.location(site));
  return e;
}

inline std::vector<ExceedanceSet> exceedance_sets(const SpatialDataset& data, double u) {
  std::vector<ExceedanceSet> out;
  out.reserve(static_cast<std::size_t>(data.num_sites()));
  for (int j = 0; j < data.num_sites(); ++j) out.push_back(exceedance_set(data, j, u));
  return out;
}

// ---- likelihood ----------------------------------------------------------

/// Negative log-likelihood of one exceedance set: -sum_i [log f_Z(z_i) -
/// sum_k log b_k(x_i)], with z_ik = (x_ik - alpha_k x_i) / b_k(x_i).
inline double site_nll(const ExceedanceSet& e, const Locations& locations, const ConditionalModelParams& p) {
  require(!e.rows.empty(), "site " + std::to_string(e.site) + " has no threshold exceedances");
  SiteDistances computed;
  if (e.dist.h0.size() != static_cast<Eigen::Index>(e.others.size()))
    computed = site_distances(select_rows(locations, e.others), locations.row(e.site));
  const SiteDistances& dist = computed.h0.size() ? computed : e.dist;
  const ResidualField field(dist, p.z, empirical_mean_override(p.z, e.site, e.others));
  const auto m = dist.h0.size();
  const auto n = e.cond.size();
  VectorXd alpha(m);
  for (Eigen::Index k = 0; k < m; ++k) alpha[k] = alpha_fn(dist.h0[k], p.alpha);

  MatrixXd z(n, m);
  double log_b_total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x0 = e.cond[i];
    for (Eigen::Index k = 0; k < m; ++k) {
      const double b = b_value(x0, alpha[k], p.b);
      z(i, k) = (e.rest(i, k) - alpha[k] * x0) / b;
      log_b_total += std::log(b);
    }
    if (!z.row(i).allFinite())
      throw NumericalError("non-finite residual at replicate " + std::to_string(e.rows[static_cast<std::size_t>(i)]) +
                           " (conditioning site " + std::to_string(e.site) + ")");
  }
  const VectorXd ld = field.log_density_rows(z, false);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(ld[i]))
      throw NumericalError("non-finite log density at replicate " +
                           std::to_string(e.rows[static_cast<std::size_t>(i)]) + " (conditioning site " +
                           std::to_string(e.site) + ")");
  return -(ld.sum() - log_b_total);
}

inline double single_site_nll(const SpatialDataset& data, int j, double u, const ConditionalModelParams& p) {
  validate(p);
  return site_nll(exceedance_set(data, j, u), data.locations, p);
}

inline double composite_nll(const std::vector<ExceedanceSet>& sets, const Locations& locations,
                            const ConditionalModelParams& p, int workers = 1) {
  validate(p);
  std::vector<double> parts(sets.size(), 0.0);
  parallel_for(static_cast<int>(sets.size()), workers, [&](int j) {
    const auto& e = sets[static_cast<std::size_t>(j)];
    if (!e.rows.empty()) parts[static_cast<std::size_t>(j)] = site_nll(e, locations, p);
  });
  double total = 0.0;
  for (double v : parts) total += v;
  return total;
}

/// Sum of single-site negative log-likelihoods over every site with at least
/// one exceedance of u.
inline double composite_nll(const SpatialDataset& data, double u, const ConditionalModelParams& p, int workers = 1) {
  require(data.margin == MarginTag::laplace, "composite likelihood expects Laplace-scale data");
  return composite_nll(exceedance_sets(data, u), data.locations, p, workers);
}

// ---- parameterization ------------------------------------------------------

/// Names of the scalar parameters, in the order used by ParamCodec.
inline const std::vector<std::string>& parameter_names() {
  static const std::vector<std::string> names{"lambda", "kappa", "beta",   "zeta",   "mu",
                                              "sigma",  "phi",   "nu",     "delta1", "delta2"};
  return names;
}

inline double& parameter_ref(ConditionalModelParams& p, const std::string& name) {
  if (name == "lambda") return p.alpha.lambda;
  if (name == "kappa") return p.alpha.kappa;
  if (name == "beta") return p.b.beta;
  if (name == "zeta") return p.b.zeta;
  if (name == "mu") return p.z.mu;
  if (name == "sigma") return p.z.sigma;
  if (name == "phi") return p.z.phi;
  if (name == "nu") return p.z.nu;
  if (name == "delta1") return p.z.delta1;
  if (name == "delta2") return p.z.delta2;
  if (name == "Delta") return p.alpha.Delta;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

inline double parameter_value(const ConditionalModelParams& p, const std::string& name) {
  auto copy = p;
  return parameter_ref(copy, name);
}

inline constexpr double kBetaUpper = 1.0 - 1e-6;

/// Maps the free parameters of a model to an unconstrained vector and back:
/// log for positive parameters, scaled logistic for bounded ones.
class ParamCodec {
 public:
  ParamCodec(const ConditionalModelParams& base, const std::map<std::string, double>& fixed = {}) : base_(base) {
    for (const auto& [name, value] : fixed) parameter_ref(base_, name) = value;
    for (const auto& name : parameter_names()) {
      if (fixed.count(name)) continue;
      if (name == "zeta" && base_.b.variant != BVariant::model1) continue;
      if (name == "sigma" && base_.z.variant == ResidualVariant::increments) continue;
      if (name == "mu" && base_.z.empirical_means) continue;
      names_.push_back(name);
    }
  }

  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }
  const ConditionalModelParams& base() const { return base_; }

  VectorXd encode(const ConditionalModelParams& p) const {
    VectorXd x(size());
    for (int i = 0; i < size(); ++i) x[i] = to_free(names_[static_cast<std::size_t>(i)], parameter_value(p, names_[static_cast<std::size_t>(i)]));
    return x;
  }

  ConditionalModelParams decode(const VectorXd& x) const {
    ConditionalModelParams p = base_;
    for (int i = 0; i < size(); ++i) parameter_ref(p, names_[static_cast<std::size_t>(i)]) = from_free(names_[static_cast<std::size_t>(i)], x[i]);
    return p;
  }

 private:
  static double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }
  static double logit(double p) { return std::log(p / (1.0 - p)); }

  double to_free(const std::string& name, double v) const {
    if (name == "mu") return v;
    if (name == "beta") {
      if (base_.b.variant == BVariant::model1) return std::log(-v);
      return logit(std::clamp(v / kBetaUpper, 1e-12, 1.0 - 1e-12));
    }
    if (name == "nu") return logit(std::clamp(v / 2.0, 1e-12, 1.0 - 1e-12));
    return std::log(v);
  }

  double from_free(const std::string& name, double t) const {
    if (name == "mu") return t;
    if (name == "beta") {
      if (base_.b.variant == BVariant::model1) return -std::exp(t);
      return kBetaUpper * logistic(t);
    }
    if (name == "nu") return 2.0 * logistic(t);
    return std::exp(t);
  }

  ConditionalModelParams base_;
  std::vector<std::string> names_;
};

// ---- fitting ---------------------------------------------------------------

enum class OptimizerKind { nelder_mead, bfgs };

struct FitConfig {
  BVariant b_variant = BVariant::model3;
  ResidualVariant residual_variant = ResidualVariant::conditioned;
  std::vector<double> delta_grid{0.0};          // Delta values profiled over
  std::map<std::string, double> fixed;          // parameters held at a value
  std::optional<ConditionalModelParams> start;  // single user start
  int n_starts = 3;                             // moment-based, mid-range, perturbed
  int screen_evaluations = 400;                 // per start, before polishing the best
  int max_evaluations = 6000;
  double f_tolerance = 1e-9;
  double x_tolerance = 1e-4;
  OptimizerKind optimizer = OptimizerKind::nelder_mead;
  std::uint64_t seed = 20190101;  // perturbed start only
  int workers = 1;
};

struct FitInfo {
  double nll = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<int> exceedances;                       // n_j per site
  std::vector<std::pair<double, double>> delta_profile;  // (Delta, best nll)
};

struct FittedModel {
  ConditionalModelParams params;
  double threshold_u = 0.0;      // Laplace scale
  double threshold_quantile = 0.0;
  Locations locations;           // coordinates the model was fitted in
  std::optional<MarginalTransform> transforms;
  FitInfo info;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 1.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<double> pair_distances(const Locations& locs) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < locs.rows(); ++i)
    for (Eigen::Index j = i + 1; j < locs.rows(); ++j) out.push_back(distance(locs.row(i), locs.row(j)));
  return out;
}

// alpha from ratios of conditional means, then a log-log regression of
// -log alpha on distance for (lambda, kappa).
inline AlphaParams moment_alpha(const std::vector<ExceedanceSet>& sets, const Locations& locs, double Delta) {
  std::vector<double> lx, ly;
  for (const auto& e : sets) {
    if (e.rows.size() < 2) continue;
    const double mc = e.cond.mean();
    for (std::size_t k = 0; k < e.others.size(); ++k) {
      const double h = distance(locs.row(e.site), locs.row(e.others[k])) - Delta;
      if (h <= 0.0) continue;
      const double a = std::clamp(e.rest.col(static_cast<Eigen::Index>(k)).mean() / mc, 0.02, 0.98);
      lx.push_back(std::log(h));
      ly.push_back(std::log(-std::log(a)));
    }
  }
  AlphaParams out;
  out.Delta = Delta;
  if (lx.size() < 2) return out;
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  const double kappa = sxx > 0.0 ? std::clamp(sxy / sxx, 0.3, 3.0) : 1.0;
  out.kappa = kappa;
  out.lambda = std::exp(mx - my / kappa);
  return out;
}

}  // namespace detail

/// Starting points used by fit(): moment-based, mid-range and a perturbed
/// copy of the moment-based start.
inline std::vector<ConditionalModelParams> default_starts(const std::vector<ExceedanceSet>& sets,
                                                          const Locations& locs, const FitConfig& cfg,
                                                          double Delta) {
  const auto dists = detail::pair_distances(locs);
  const double med = detail::median(dists);
  const double dmax = dists.empty() ? 1.0 : *std::max_element(dists.begin(), dists.end());

  ConditionalModelParams mom;
  mom.alpha = detail::moment_alpha(sets, locs, Delta);
  mom.b = cfg.b_variant == BVariant::model1   ? BModel::model1(0.5, -0.5)
          : cfg.b_variant == BVariant::model2 ? BModel::model2(0.3)
                                              : BModel::model3(0.5);
  mom.z.variant = cfg.residual_variant;
  mom.z.mu = 0.0;
  mom.z.sigma = 1.0;
  mom.z.phi = med;
  mom.z.nu = 1.0;
  mom.z.delta1 = med;
  mom.z.delta2 = 1.0;

  ConditionalModelParams mid = mom;
  mid.alpha.lambda = 0.5 * dmax;
  mid.alpha.kappa = 1.0;
  mid.z.phi = 0.5 * dmax;
  mid.z.delta1 = 0.5 * dmax;
  mid.z.delta2 = 1.5;
  mid.z.sigma = 1.2;

  std::vector<ConditionalModelParams> out{mom, mid};
  if (cfg.n_starts >= 3) {
    const ParamCodec codec(mom, cfg.fixed);
    VectorXd x = codec.encode(mom);
    Rng gen = make_rng(cfg.seed);
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (auto& v : x) v += jitter(gen);
    out.push_back(codec.decode(x));
  }
  out.resize(static_cast<std::size_t>(std::clamp(cfg.n_starts, 1, 3)));
  return out;
}

namespace detail {

inline OptimResult minimize(const Objective& f, const VectorXd& x0, OptimizerKind kind, int budget, double ftol,
                            double xtol, int restarts) {
  if (kind == OptimizerKind::bfgs) {
    BfgsOptions o;
    o.max_evaluations = budget;
    return bfgs(f, x0, o);
  }
  NelderMeadOptions o;
  o.max_evaluations = budget;
  o.f_tolerance = ftol;
  o.x_tolerance = xtol;
  o.restarts = restarts;
  return nelder_mead(f, x0, o);
}

}  // namespace detail

/// Objective on the unconstrained scale; illegal or numerically degenerate
/// points evaluate to +infinity.
inline Objective make_objective(const std::vector<ExceedanceSet>& sets, const Locations& locs, const ParamCodec& codec,
                                int workers) {
  return [&sets, &locs, codec, workers](const VectorXd& x) {
    try {
      return composite_nll(sets, locs, codec.decode(x), workers);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const InvalidArgument&) {
      return std::numeric_limits<double>::infinity();
    }
  };
}

/// Maximum composite-likelihood fit. Non-convergence is reported through
/// info.converged with the best iterate returned.
inline FittedModel fit(const SpatialDataset& data, double u, const FitConfig& cfg) {
  validate(data);
  require(data.margin == MarginTag::laplace, "fit expects Laplace-scale data");
  require(u > 0.0, "threshold must be positive on the Laplace scale");
  require(!cfg.delta_grid.empty(), "Delta grid must not be empty");
  if (cfg.b_variant != BVariant::model1)
    for (double D : cfg.delta_grid) require(D == 0.0, "models 2 and 3 take Delta = 0");

  const auto sets = exceedance_sets(data, u);
  FittedModel best;
  best.threshold_u = u;
  best.locations = data.locations;
  for (const auto& e : sets) best.info.exceedances.push_back(static_cast<int>(e.rows.size()));
  require(std::any_of(sets.begin(), sets.end(), [](const auto& e) { return !e.rows.empty(); }),
          "no site exceeds the threshold");

  for (double Delta : cfg.delta_grid) {
    std::vector<ConditionalModelParams> starts;
    if (cfg.start) {
      starts.push_back(*cfg.start);
      starts.back().alpha.Delta = Delta;
    } else {
      starts = default_starts(sets, data.locations, cfg, Delta);
    }
    ConditionalModelParams base = starts.front();
    base.b.variant = cfg.b_variant;
    base.z.variant = cfg.residual_variant;
    base.alpha.Delta = Delta;
    const ParamCodec codec(base, cfg.fixed);
    const Objective f = make_objective(sets, data.locations, codec, cfg.workers);

    int evals = 0;
    VectorXd x_best = codec.encode(starts.front());
    double f_best = std::numeric_limits<double>::infinity();
    if (starts.size() > 1) {
      const int screen = std::min(cfg.screen_evaluations,
                                  cfg.max_evaluations / (2 * static_cast<int>(starts.size())));
      for (const auto& s : starts) {
        auto r = detail::minimize(f, codec.encode(s), cfg.optimizer, std::max(screen, 1), cfg.f_tolerance,
                                  cfg.x_tolerance, 0);
        evals += r.evaluations;
        if (r.value < f_best) {
          f_best = r.value;
          x_best = r.x;
        }
      }
    }
    auto r = detail::minimize(f, x_best, cfg.optimizer, std::max(cfg.max_evaluations - evals, 1),
                              cfg.f_tolerance, cfg.x_tolerance, 2);
    evals += r.evaluations;
    best.info.delta_profile.emplace_back(Delta, r.value);
    if (r.value < best.info.nll || !std::isfinite(best.info.nll)) {
      best.params = codec.decode(r.x);
      best.info.nll = r.value;
      best.info.converged = r.converged && std::isfinite(r.value);
      best.info.iterations = r.iterations;
    }
    best.info.evaluations += evals;
  }
  return best;
}

// ---- pairwise fits ---------------------------------------------------------

/// Scalar-Z fit for one pair: a = alpha x, b = 1 + (alpha x)^beta,
/// Z ~ delta-Laplace(mu, sigma, delta), shared over both conditioning
/// directions.
struct PairFit {
  int i = 0;
  int j = 0;
  double distance = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double mu = 0.0;
  double sigma = 1.0;
  double delta = 1.0;
  double nll = 0.0;
  int n_i = 0;  // exceedances at i
  int n_j = 0;
  bool converged = false;
};

namespace detail {

struct PairData {
  std::vector<double> cond;
  std::vector<double> other;
};

inline double pair_nll(const std::vector<PairData>& dirs, double alpha, double beta, const DeltaLaplaceParams& z) {
  if (!(z.sigma > 0.0) || !(z.delta > 0.0) || !std::isfinite(z.mu)) return std::numeric_limits<double>::infinity();
  const DeltaLaplace law(z);
  double nll = 0.0;
  for (const auto& d : dirs) {
    for (std::size_t i = 0; i < d.cond.size(); ++i) {
      const double a = alpha * d.cond[i];
      const double b = 1.0 + std::pow(a, beta);
      const double r = (d.other[i] - a) / b;
      nll -= law.log_pdf(r) - std::log(b);
    }
  }
  return std::isfinite(nll) ? nll : std::numeric_limits<double>::infinity();
}

}  // namespace detail

inline std::vector<PairFit> pairwise_fit(const SpatialDataset& data, double u,
                                         const std::vector<std::pair<int, int>>& pairs, int max_evaluations = 3000) {
  validate(data);
  require(data.margin == MarginTag::laplace, "pairwise_fit expects Laplace-scale data");
  std::vector<PairFit> out;
  out.reserve(pairs.size());
  for (const auto& [si, sj] : pairs) {
    require(si != sj && si >= 0 && sj >= 0 && si < data.num_sites() && sj < data.num_sites(), "bad site pair");
    std::vector<detail::PairData> dirs(2);
    for (int r = 0; r < data.num_replicates(); ++r) {
      if (data.observations(r, si) > u) {
        dirs[0].cond.push_back(data.observations(r, si));
        dirs[0].other.push_back(data.observations(r, sj));
      }
      if (data.observations(r, sj) > u) {
        dirs[1].cond.push_back(data.observations(r, sj));
        dirs[1].other.push_back(data.observations(r, si));
      }
    }
    PairFit pf;
    pf.i = si;
    pf.j = sj;
    pf.distance = distance(data.location(si), data.location(sj));
    pf.n_i = static_cast<int>(dirs[0].cond.size());
    pf.n_j = static_cast<int>(dirs[1].cond.size());
    if (pf.n_i + pf.n_j == 0) {
      out.push_back(pf);
      continue;
    }
    // x = (logit alpha, atanh beta, mu, log sigma, log delta)
    auto decode = [](const VectorXd& x, double& alpha, double& beta, DeltaLaplaceParams& z) {
      alpha = 1.0 / (1.0 + std::exp(-x[0]));
      beta = std::tanh(x[1]);
      z = {x[2], std::exp(x[3]), std::exp(x[4])};
    };
    const Objective f = [&](const VectorXd& x) {
      double alpha, beta;
      DeltaLaplaceParams z;
      decode(x, alpha, beta, z);
      return detail::pair_nll(dirs, alpha, beta, z);
    };
    OptimResult best;
    for (double a0 : {0.2, 0.8}) {
      VectorXd x0(5);
      x0 << std::log(a0 / (1.0 - a0)), std::atanh(0.3), 0.0, 0.0, std::log(1.5);
      NelderMeadOptions o;
      o.max_evaluations = max_evaluations;
      o.f_tolerance = 1e-10;
      auto r = nelder_mead(f, x0, o);
      if (r.value < best.value) best = r;
    }
    DeltaLaplaceParams z;
    decode(best.x, pf.alpha, pf.beta, z);
    pf.mu = z.mu;
    pf.sigma = z.sigma;
    pf.delta = z.delta;
    pf.nll = best.value;
    pf.converged = best.converged;
    out.push_back(pf);
  }
  return out;
}

// ---- residuals and refit -----------------------------------------------------

/// Fitted residuals Z^j for one conditioning site: one row per exceedance,
/// one column per site (the conditioning column is zero).
struct SiteResiduals {
  int site = 0;
  std::vector<int> rows;
  VectorXd cond;
  MatrixXd z;  // n_j x d
};

inline std::vector<SiteResiduals> extract_residuals(const SpatialDataset& data, const FittedModel& fitted) {
  validate(data);
  require(data.margin == MarginTag::laplace, "extract_residuals expects Laplace-scale data");
  require(data.num_sites() == fitted.locations.rows(), "dataset and fitted model disagree on the number of sites");
  const auto& p = fitted.params;
  const int d = data.num_sites();
  std::vector<SiteResiduals> out;
  for (int j = 0; j < d; ++j) {
    SiteResiduals r;
    r.site = j;
    for (int i = 0; i < data.num_replicates(); ++i)
      if (data.observations(i, j) > fitted.threshold_u) r.rows.push_back(i);
    const auto n = static_cast<Eigen::Index>(r.rows.size());
    r.cond.resize(n);
    r.z.resize(n, d);
    for (int k = 0; k < d; ++k) {
      const double alpha = alpha_fn(distance(fitted.locations.row(j), fitted.locations.row(k)), p.alpha);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double x0 = data.observations(r.rows[static_cast<std::size_t>(i)], j);
        r.cond[i] = x0;
        r.z(i, k) = (data.observations(r.rows[static_cast<std::size_t>(i)], k) - alpha * x0) / b_value(x0, alpha, p.b);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct RefitConfig {
  int min_exceedances = 20;
  int max_evaluations = 4000;
  std::map<std::string, double> fixed;
};

struct RefitResult {
  ResidualFieldSpec spec;  // empirical_means populated
  double nll = 0.0;
  bool converged = false;
  std::vector<int> excluded_sites;
  std::vector<std::string> warnings;
};

/// Refits the residual-field parameters with the mean of Z^j fixed at the
/// per-site empirical means.
inline RefitResult refit_residuals(const std::vector<SiteResiduals>& residuals, const Locations& locations,
                                   const ResidualFieldSpec& start, const RefitConfig& cfg = {}) {
  validate(start);
  const auto d = locations.rows();
  RefitResult res;
  MatrixXd means = MatrixXd::Zero(d, d);
  std::vector<const SiteResiduals*> used;
  for (const auto& r : residuals) {
    require(r.z.cols() == d, "residual matrix has the wrong number of columns");
    if (static_cast<int>(r.rows.size()) < cfg.min_exceedances) {
      res.excluded_sites.push_back(r.site);
      res.warnings.push_back("site " + std::to_string(r.site) + " excluded: " + std::to_string(r.rows.size()) +
                             " exceedances < " + std::to_string(cfg.min_exceedances));
      // parametric means keep simulation at this site possible
      for (Eigen::Index k = 0; k < d; ++k)
        if (k != r.site) {
          const double h = distance(locations.row(r.site), locations.row(k));
          means(r.site, k) = start.variant == ResidualVariant::conditioned
                                 ? start.mu * (1.0 - correlation(h, start))
                                 : start.mu - 0.5 * variogram(h, start);
        }
      continue;
    }
    means.row(r.site) = r.z.colwise().mean();
    means(r.site, r.site) = 0.0;
    used.push_back(&r);
  }
  require(!used.empty(), "no site has enough exceedances to refit the residual field");

  ConditionalModelParams base;
  base.z = start;
  base.z.empirical_means = means;
  std::map<std::string, double> fixed = cfg.fixed;
  for (const char* name : {"lambda", "kappa", "beta", "zeta", "mu"}) fixed.emplace(name, parameter_value(base, name));
  const ParamCodec codec(base, fixed);

  struct Prepared {
    int site;
    std::vector<int> others;
    SiteDistances dist;
    MatrixXd z;
  };
  std::vector<Prepared> prep;
  for (const auto* r : used) {
    Prepared q{r->site, {}, {}, MatrixXd(r->z.rows(), d - 1)};
    for (int k = 0; k < d; ++k)
      if (k != r->site) q.others.push_back(k);
    q.dist = site_distances(select_rows(locations, q.others), locations.row(r->site));
    for (std::size_t k = 0; k < q.others.size(); ++k) q.z.col(static_cast<Eigen::Index>(k)) = r->z.col(q.others[k]);
    prep.push_back(std::move(q));
  }

  const Objective f = [&](const VectorXd& x) {
    try {
      const auto p = codec.decode(x);
      double total = 0.0;
      for (const auto& q : prep) {
        const ResidualField field(q.dist, p.z, empirical_mean_override(p.z, q.site, q.others));
        const VectorXd ld = field.log_density_rows(q.z, false);
        if (!ld.allFinite()) return std::numeric_limits<double>::infinity();
        total -= ld.sum();
      }
      return total;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const InvalidArgument&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  NelderMeadOptions o;
  o.max_evaluations = cfg.max_evaluations;
  o.f_tolerance = 1e-10;
  o.restarts = 2;
  const auto r = nelder_mead(f, codec.encode(base), o);
  res.spec = codec.decode(r.x).z;
  res.nll = r.value;
  res.converged = r.converged && std::isfinite(r.value);
  return res;
}

}  // namespace condex
