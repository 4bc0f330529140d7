#pragma once

// Conditional simulation (one conditioning site), the importance and
// rejection samplers for "max over a site set exceeds v", unconditional
// probabilities and Gaussian-copula infill.

#include "condex/core.hpp"
#include "condex/depmodel.hpp"
#include "condex/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace condex {

using RowVectorXd = Eigen::RowVectorXd;

/// Draws per RNG stream; chunk c of a simulation uses make_rng(seed, c + 1),
/// so results do not depend on the worker count.
inline constexpr int kSimChunk = 1024;

inline int num_chunks(int nsims) { return (nsims + kSimChunk - 1) / kSimChunk; }

/// A family of conditional laws Q_j^v, j = 0..dimension()-1: the law of the
/// field on m sites given that coordinate j exceeds v.
template <class S>
concept ComponentSampler = requires(const S& s, int j, double v, Rng& gen, Eigen::Ref<RowVectorXd> out) {
  { s.dimension() } -> std::convertible_to<int>;
  s.draw(j, v, gen, out);
};

/// Q_j^v for the fitted conditional model on a subset M of observation sites:
/// X(s_j) = v + E, E ~ Exp(1), and X(s_k) = alpha_k X(s_j) + b_k Z0(s_k).
class ModelComponentSampler {
 public:
  ModelComponentSampler(const ConditionalModelParams& params, const Locations& locations, std::vector<int> sites)
      : params_(params), sites_(std::move(sites)) {
    validate(params_);
    require(!sites_.empty(), "site set must not be empty");
    for (int s : sites_) require(s >= 0 && s < locations.rows(), "site index out of range");
    const auto m = static_cast<int>(sites_.size());
    for (int j = 0; j < m; ++j) {
      Component c;
      std::vector<int> other_idx;
      for (int k = 0; k < m; ++k)
        if (k != j) {
          c.others.push_back(k);
          other_idx.push_back(sites_[static_cast<std::size_t>(k)]);
        }
      const Point s0 = locations.row(sites_[static_cast<std::size_t>(j)]);
      c.alpha.resize(static_cast<Eigen::Index>(c.others.size()));
      for (std::size_t k = 0; k < other_idx.size(); ++k)
        c.alpha[static_cast<Eigen::Index>(k)] = alpha_fn(distance(locations.row(other_idx[k]), s0), params_.alpha);
      if (!other_idx.empty()) {
        const auto over = empirical_mean_override(params_.z, sites_[static_cast<std::size_t>(j)], other_idx);
        c.field.emplace(select_rows(locations, other_idx), s0, params_.z, over);
      }
      components_.push_back(std::move(c));
    }
  }

  ModelComponentSampler(const FittedModel& fitted, std::vector<int> sites)
      : ModelComponentSampler(fitted.params, fitted.locations, std::move(sites)) {}

  int dimension() const { return static_cast<int>(sites_.size()); }
  const std::vector<int>& sites() const { return sites_; }

  void draw(int j, double v, Rng& gen, Eigen::Ref<RowVectorXd> out) const {
    const auto& c = components_[static_cast<std::size_t>(j)];
    std::exponential_distribution<double> expo(1.0);
    const double x0 = v + expo(gen);
    out[j] = x0;
    if (!c.field) return;
    VectorXd z(c.field->size());
    c.field->sample_into(gen, z);
    for (std::size_t k = 0; k < c.others.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      out[c.others[k]] = c.alpha[kk] * x0 + b_value(x0, c.alpha[kk], params_.b) * z[kk];
    }
  }

 private:
  struct Component {
    std::vector<int> others;
    VectorXd alpha;
    std::optional<ResidualField> field;
  };
  ConditionalModelParams params_;
  std::vector<int> sites_;
  std::vector<Component> components_;
};

static_assert(ComponentSampler<ModelComponentSampler>);

// ---- single-site conditional simulation --------------------------------------

struct ConditionalDraws {
  VectorXd x0;  // X(s0), all > v
  MatrixXd x;   // nsims x sites
};

namespace detail {

// Index of each point in `locs`, or nullopt if any point is not a site.
inline std::optional<std::vector<int>> match_sites(const Locations& locs, const Locations& points) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    int found = -1;
    for (Eigen::Index k = 0; k < locs.rows(); ++k)
      if (locs.row(k) == points.row(i)) found = static_cast<int>(k);
    if (found < 0) return std::nullopt;
    out.push_back(found);
  }
  return out;
}

}  // namespace detail

/// nsims draws of the field at `sim_sites` given X(s0) > v. s0 may be any
/// location; sim sites coinciding with s0 return X(s0). Empirical residual
/// means are used only when s0 and every sim site are observation sites.
inline ConditionalDraws sim_given_site(const FittedModel& fitted, const Point& s0, const Locations& sim_sites, double v,
                                       int nsims, std::uint64_t seed, int workers = 1) {
  validate(fitted.params);
  require(v >= fitted.threshold_u, "simulation level v must be at least the fitted threshold");
  require(nsims >= 1, "nsims must be positive");
  const auto& p = fitted.params;

  std::vector<int> at_s0, away;
  for (Eigen::Index k = 0; k < sim_sites.rows(); ++k)
    (distance(sim_sites.row(k), s0) == 0.0 ? at_s0 : away).push_back(static_cast<int>(k));
  const Locations sub = select_rows(sim_sites, away);

  std::optional<VectorXd> over;
  ResidualFieldSpec spec = p.z;
  if (spec.empirical_means) {
    Locations s0_loc(1, 2);
    s0_loc.row(0) = s0;
    const auto c = detail::match_sites(fitted.locations, s0_loc);
    const auto k = detail::match_sites(fitted.locations, sub);
    if (c && k) over = empirical_mean_override(spec, (*c)[0], *k);
    spec.empirical_means.reset();
  }
  std::optional<ResidualField> field;
  if (!away.empty()) field.emplace(sub, s0, spec, over);
  VectorXd alpha(static_cast<Eigen::Index>(away.size()));
  for (std::size_t k = 0; k < away.size(); ++k) alpha[static_cast<Eigen::Index>(k)] = alpha_fn(distance(sub.row(static_cast<Eigen::Index>(k)), s0), p.alpha);

  ConditionalDraws out{VectorXd(nsims), MatrixXd(nsims, sim_sites.rows())};
  parallel_for(num_chunks(nsims), workers, [&](int c) {
    Rng gen = make_rng(seed, static_cast<std::uint64_t>(c) + 1);
    std::exponential_distribution<double> expo(1.0);
    VectorXd z(static_cast<Eigen::Index>(away.size()));
    const int end = std::min(nsims, (c + 1) * kSimChunk);
    for (int i = c * kSimChunk; i < end; ++i) {
      const double x0 = v + expo(gen);
      out.x0[i] = x0;
      if (field) field->sample_into(gen, z);
      for (int k : at_s0) out.x(i, k) = x0;
      for (std::size_t k = 0; k < away.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        out.x(i, away[k]) = alpha[kk] * x0 + b_value(x0, alpha[kk], p.b) * z[kk];
      }
    }
  });
  return out;
}

// ---- importance sampling -----------------------------------------------------

/// Draws from the equal-weight mixture Q^v of the component laws.
struct ImportanceSample {
  MatrixXd draws;                  // n x m, Laplace scale
  std::vector<int> component;      // mixture component per draw
  std::vector<int> exceed_count;   // |{k : X_k > v}| per draw, >= 1
  VectorXd weight;                 // 1 / exceed_count
  double v = 0.0;
  std::vector<int> sites;          // site indices of M, when known

  int size() const { return static_cast<int>(draws.rows()); }
};

template <ComponentSampler S>
ImportanceSample draw_importance_sample(const S& sampler, double v, int nsims, std::uint64_t seed, int workers = 1) {
  require(nsims >= 1, "nsims must be positive");
  const int m = sampler.dimension();
  require(m >= 1, "sampler has no components");
  ImportanceSample s;
  s.v = v;
  s.draws.resize(nsims, m);
  s.component.assign(static_cast<std::size_t>(nsims), 0);
  s.exceed_count.assign(static_cast<std::size_t>(nsims), 0);
  s.weight.resize(nsims);
  parallel_for(num_chunks(nsims), workers, [&](int c) {
    Rng gen = make_rng(seed, static_cast<std::uint64_t>(c) + 1);
    std::uniform_int_distribution<int> pick(0, m - 1);
    RowVectorXd row(m);
    const int end = std::min(nsims, (c + 1) * kSimChunk);
    for (int i = c * kSimChunk; i < end; ++i) {
      const int j = pick(gen);
      sampler.draw(j, v, gen, row);
      s.draws.row(i) = row;
      const int count = static_cast<int>((row.array() > v).count());
      if (count < 1) throw NumericalError("component draw does not exceed v at its conditioning site");
      s.component[static_cast<std::size_t>(i)] = j;
      s.exceed_count[static_cast<std::size_t>(i)] = count;
      s.weight[i] = 1.0 / count;
    }
  });
  return s;
}

inline ImportanceSample draw_importance_sample(const FittedModel& fitted, const std::vector<int>& sites, double v,
                                               int nsims, std::uint64_t seed, int workers = 1) {
  require(v >= fitted.threshold_u, "simulation level v must be at least the fitted threshold");
  auto s = draw_importance_sample(ModelComponentSampler(fitted, sites), v, nsims, seed, workers);
  s.sites = sites;
  return s;
}

struct Estimate {
  VectorXd value;
  VectorXd se;
};

/// Self-normalized estimate sum w g / sum w of E[g(X) | max X > v] with
/// delta-method standard errors, for vector-valued g.
inline Estimate importance_estimate(const ImportanceSample& s,
                                    const std::function<VectorXd(const RowVectorXd&)>& g) {
  require(s.size() >= 1, "empty importance sample");
  const double wsum = s.weight.sum();
  std::vector<VectorXd> vals(static_cast<std::size_t>(s.size()));
  for (int i = 0; i < s.size(); ++i) {
    vals[static_cast<std::size_t>(i)] = g(s.draws.row(i));
    if (!vals[static_cast<std::size_t>(i)].allFinite())
      throw NumericalError("functional returned a non-finite value at draw " + std::to_string(i));
  }
  const auto p = vals.front().size();
  Estimate e{VectorXd::Zero(p), VectorXd::Zero(p)};
  for (int i = 0; i < s.size(); ++i) e.value += s.weight[i] * vals[static_cast<std::size_t>(i)];
  e.value /= wsum;
  for (int i = 0; i < s.size(); ++i)
    e.se.array() += (s.weight[i] * (vals[static_cast<std::size_t>(i)] - e.value).array()).square();
  e.se = e.se.array().sqrt() / wsum;
  return e;
}

struct ScalarEstimate {
  double value = 0.0;
  double se = 0.0;
};

inline ScalarEstimate importance_estimate(const ImportanceSample& s, const std::function<double(const RowVectorXd&)>& g) {
  const auto e = importance_estimate(s, [&](const RowVectorXd& x) { return VectorXd::Constant(1, g(x)); });
  return {e.value[0], e.se[0]};
}

/// n_out rows drawn without replacement with probability proportional to
/// the weights (Efraimidis-Spirakis keys). Returns row indices, ascending
/// by selection order.
inline std::vector<int> importance_subsample(const ImportanceSample& s, int n_out, std::uint64_t seed) {
  require(n_out >= 1, "subsample size must be positive");
  require(n_out < s.size(), "subsample size must be smaller than the sample");
  Rng gen = make_rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::pair<double, int>> keys(static_cast<std::size_t>(s.size()));
  for (int i = 0; i < s.size(); ++i) {
    double u = unif(gen);
    while (u == 0.0) u = unif(gen);
    keys[static_cast<std::size_t>(i)] = {std::log(u) / s.weight[i], i};
  }
  std::partial_sort(keys.begin(), keys.begin() + n_out, keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<int> out(static_cast<std::size_t>(n_out));
  for (int i = 0; i < n_out; ++i) out[static_cast<std::size_t>(i)] = keys[static_cast<std::size_t>(i)].second;
  return out;
}

inline MatrixXd take_rows(const MatrixXd& m, const std::vector<int>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// ---- rejection sampling --------------------------------------------------------

/// Proportion of replicates with max over M above u in which each site of M
/// attains the maximum.
inline VectorXd empirical_max_proportions(const SpatialDataset& data, const std::vector<int>& sites, double u) {
  require(!sites.empty(), "site set must not be empty");
  VectorXd counts = VectorXd::Zero(static_cast<Eigen::Index>(sites.size()));
  for (int i = 0; i < data.num_replicates(); ++i) {
    int arg = 0;
    for (std::size_t k = 1; k < sites.size(); ++k)
      if (data.observations(i, sites[k]) > data.observations(i, sites[static_cast<std::size_t>(arg)])) arg = static_cast<int>(k);
    if (data.observations(i, sites[static_cast<std::size_t>(arg)]) > u) counts[arg] += 1.0;
  }
  const double total = counts.sum();
  require(total > 0.0, "no replicate exceeds u on the site set");
  return counts / total;
}

struct RejectionSample {
  MatrixXd draws;
  std::vector<int> component;
  long long attempts = 0;
  double acceptance_rate = 0.0;
  std::vector<int> unavailable;  // components with zero probability
  std::vector<std::string> warnings;
};

/// Draws from the law of X given max X > v: pick component j with
/// probability pi_j, draw from Q_j^v, accept when coordinate j is the maximum.
template <ComponentSampler S>
RejectionSample sim_rejection(const S& sampler, const VectorXd& pi, double v, int nsims, std::uint64_t seed,
                              int workers = 1, long long max_attempts_per_draw = 100000) {
  const int m = sampler.dimension();
  require(pi.size() == m, "mixture probabilities must have one entry per component");
  require((pi.array() >= 0.0).all() && pi.sum() > 0.0, "mixture probabilities must be non-negative");
  require(nsims >= 1, "nsims must be positive");
  RejectionSample out;
  for (int j = 0; j < m; ++j)
    if (pi[j] == 0.0) {
      out.unavailable.push_back(j);
      out.warnings.push_back("component " + std::to_string(j) + " never attains the empirical maximum; unavailable");
    }
  std::vector<double> w(pi.data(), pi.data() + m);
  out.draws.resize(nsims, m);
  out.component.assign(static_cast<std::size_t>(nsims), 0);
  std::vector<long long> attempts(static_cast<std::size_t>(num_chunks(nsims)), 0);
  parallel_for(num_chunks(nsims), workers, [&](int c) {
    Rng gen = make_rng(seed, static_cast<std::uint64_t>(c) + 1);
    std::discrete_distribution<int> pick(w.begin(), w.end());
    RowVectorXd row(m);
    const int end = std::min(nsims, (c + 1) * kSimChunk);
    for (int i = c * kSimChunk; i < end; ++i) {
      for (long long a = 0;; ++a) {
        if (a >= max_attempts_per_draw) throw NumericalError("rejection sampler: acceptance rate too low");
        const int j = pick(gen);
        sampler.draw(j, v, gen, row);
        ++attempts[static_cast<std::size_t>(c)];
        Eigen::Index arg;
        row.maxCoeff(&arg);
        if (arg == j) {
          out.draws.row(i) = row;
          out.component[static_cast<std::size_t>(i)] = j;
          break;
        }
      }
    }
  });
  out.attempts = std::accumulate(attempts.begin(), attempts.end(), 0LL);
  out.acceptance_rate = static_cast<double>(nsims) / static_cast<double>(out.attempts);
  return out;
}

/// Algorithm with mixture probabilities estimated from the data at the
/// fitted threshold.
inline RejectionSample sim_rejection(const FittedModel& fitted, const SpatialDataset& data,
                                     const std::vector<int>& sites, double v, int nsims, std::uint64_t seed,
                                     int workers = 1) {
  require(v >= fitted.threshold_u, "simulation level v must be at least the fitted threshold");
  const VectorXd pi = empirical_max_proportions(data, sites, fitted.threshold_u);
  return sim_rejection(ModelComponentSampler(fitted, sites), pi, v, nsims, seed, workers);
}

// ---- unconditional probabilities ------------------------------------------------

/// P(max over M of X > v) = P(X_j > v) / P(X_j > v | max > v), averaged over
/// j in M. On Laplace margins this reduces to m e^{-v}/2 times the mean
/// importance weight.
inline ScalarEstimate unconditional_prob(const ImportanceSample& s) {
  require(s.v > 0.0, "unconditional probability needs v > 0 on the Laplace scale");
  const double m = static_cast<double>(s.draws.cols());
  const double pv = 0.5 * std::exp(-s.v);
  const double n = s.size();
  const double mean_w = s.weight.mean();
  if (!(mean_w > 0.0)) throw NumericalError("degenerate denominator in unconditional probability");
  const double var_w = s.size() > 1 ? (s.weight.array() - mean_w).square().sum() / (n - 1.0) : 0.0;
  return {m * pv * mean_w, m * pv * std::sqrt(var_w / n)};
}

template <ComponentSampler S>
ScalarEstimate unconditional_prob(const S& sampler, double v, int nsims, std::uint64_t seed, int workers = 1) {
  return unconditional_prob(draw_importance_sample(sampler, v, nsims, seed, workers));
}

inline ScalarEstimate unconditional_prob(const FittedModel& fitted, const std::vector<int>& sites, double v, int nsims,
                                         std::uint64_t seed, int workers = 1) {
  return unconditional_prob(draw_importance_sample(fitted, sites, v, nsims, seed, workers));
}

// ---- conditional infill ------------------------------------------------------------

struct InfillInput {
  int cond_site = 0;                // j, observation-site index with x_j > u
  double x_cond = 0.0;              // X(s_j), Laplace scale
  std::vector<int> observed_sites;  // D', excluding j
  VectorXd observed_values;         // X at D', Laplace scale
};

/// Gaussian moments of the infill step, exposed for checking.
struct InfillMoments {
  VectorXd mean_L;       // unconditional Gaussian mean at L
  VectorXd sd_L;         // unconditional Gaussian sd at L
  VectorXd cond_mean;    // mu_{L|D'}
  MatrixXd cond_cov;     // Sigma_{L|D'}
};

namespace detail {

struct InfillSetup {
  InfillMoments moments;
  std::vector<DeltaLaplace> margins_L;
  VectorXd alpha_L;
  Eigen::LLT<MatrixXd> cond_llt;
};

inline InfillSetup infill_setup(const FittedModel& fitted, const InfillInput& in, const Locations& targets) {
  const auto& p = fitted.params;
  validate(p);
  const auto& locs = fitted.locations;
  require(in.cond_site >= 0 && in.cond_site < locs.rows(), "conditioning site out of range");
  require(in.x_cond > fitted.threshold_u, "conditioning value must exceed the fitted threshold");
  require(in.observed_values.size() == static_cast<Eigen::Index>(in.observed_sites.size()),
          "one observed value per observed site expected");
  require(in.observed_values.allFinite(), "observed values must be finite");
  require(targets.rows() >= 1, "no target sites");
  const Point s0 = locs.row(in.cond_site);
  const auto nD = static_cast<Eigen::Index>(in.observed_sites.size());
  const auto nL = targets.rows();
  Locations all(nD + nL, 2);
  for (Eigen::Index k = 0; k < nD; ++k) {
    const int s = in.observed_sites[static_cast<std::size_t>(k)];
    require(s >= 0 && s < locs.rows() && s != in.cond_site, "bad observed site index");
    all.row(k) = locs.row(s);
  }
  all.bottomRows(nL) = targets;
  for (Eigen::Index l = 0; l < nL; ++l)
    for (Eigen::Index k = 0; k < nD; ++k)
      require(targets.row(l) != all.row(k), "target sites must not coincide with observed sites");

  ResidualFieldSpec spec = p.z;
  std::optional<VectorXd> obs_means;
  if (spec.empirical_means && nD > 0) obs_means = empirical_mean_override(spec, in.cond_site, in.observed_sites);
  spec.empirical_means.reset();
  GaussMoments g = residual_gauss_moments(all, s0, spec);
  if (obs_means) g.mean.head(nD) = *obs_means;
  const VectorXd sd = g.cov.diagonal().array().sqrt();

  InfillSetup st;
  auto& mo = st.moments;
  mo.mean_L = g.mean.tail(nL);
  mo.sd_L = sd.tail(nL);
  st.alpha_L.resize(nL);
  for (Eigen::Index l = 0; l < nL; ++l) {
    const double h = distance(targets.row(l), s0);
    st.alpha_L[l] = alpha_fn(h, p.alpha);
    st.margins_L.push_back(DeltaLaplace::with_variance(mo.mean_L[l], mo.sd_L[l] * mo.sd_L[l], delta_shape(h, spec)));
  }

  if (nD == 0) {
    mo.cond_mean = mo.mean_L;
    mo.cond_cov = g.cov.bottomRightCorner(nL, nL);
  } else {
    // Gaussian values at D' from the observed residuals.
    VectorXd gD(nD);
    for (Eigen::Index k = 0; k < nD; ++k) {
      const double x = in.observed_values[k];
      const double h = distance(all.row(k), s0);
      const double a = alpha_fn(h, p.alpha);
      const double z = (x - a * in.x_cond) / b_value(in.x_cond, a, p.b);
      const DeltaLaplace law = DeltaLaplace::with_variance(g.mean[k], sd[k] * sd[k], delta_shape(h, spec));
      gD[k] = g.mean[k] + sd[k] * law.normal_score(z);
    }
    const auto llt = robust_cholesky(g.cov.topLeftCorner(nD, nD), "infill observed block");
    const MatrixXd S_DL = g.cov.topRightCorner(nD, nL);
    const MatrixXd K = llt.solve(S_DL);  // Sigma_DD^{-1} Sigma_DL
    mo.cond_mean = mo.mean_L + K.transpose() * (gD - g.mean.head(nD));
    mo.cond_cov = g.cov.bottomRightCorner(nL, nL) - S_DL.transpose() * K;
    mo.cond_cov = 0.5 * (mo.cond_cov + mo.cond_cov.transpose()).eval();
  }
  st.cond_llt = robust_cholesky(mo.cond_cov, "infill conditional block");
  return st;
}

}  // namespace detail

inline InfillMoments infill_moments(const FittedModel& fitted, const InfillInput& in, const Locations& targets) {
  return detail::infill_setup(fitted, in, targets).moments;
}

/// nsims draws of X at the target sites given X(s_j) = x_cond and the values
/// at D'. The Gaussian draw is mapped back with the unconditional marginal
/// mean and sd at each target.
inline MatrixXd infill_sim(const FittedModel& fitted, const InfillInput& in, const Locations& targets, int nsims,
                           std::uint64_t seed, int workers = 1) {
  require(nsims >= 1, "nsims must be positive");
  const auto st = detail::infill_setup(fitted, in, targets);
  const auto nL = targets.rows();
  const MatrixXd L = st.cond_llt.matrixL();
  MatrixXd out(nsims, nL);
  parallel_for(num_chunks(nsims), workers, [&](int c) {
    Rng gen = make_rng(seed, static_cast<std::uint64_t>(c) + 1);
    std::normal_distribution<double> normal;
    VectorXd e(nL);
    const int end = std::min(nsims, (c + 1) * kSimChunk);
    for (int i = c * kSimChunk; i < end; ++i) {
      for (auto& x : e) x = normal(gen);
      const VectorXd gL = st.moments.cond_mean + L * e;
      for (Eigen::Index l = 0; l < nL; ++l) {
        const double y = (gL[l] - st.moments.mean_L[l]) / st.moments.sd_L[l];
        const double z = st.margins_L[static_cast<std::size_t>(l)].from_normal_score(y);
        const double a = st.alpha_L[l];
        out(i, l) = a * in.x_cond + b_value(in.x_cond, a, fitted.params.b) * z;
      }
    }
  });
  return out;
}

}  // namespace condex
