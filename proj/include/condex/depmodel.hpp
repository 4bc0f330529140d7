#pragma once

// The conditional dependence model: location normalization a(x) = alpha(h) x,
// scale normalization b(x), and the residual field Z0 built from a Gaussian
// process with delta-Laplace margins.

#include "condex/core.hpp"
#include "condex/distributions.hpp"

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace condex {

// ---- location normalization ---------------------------------------------

struct AlphaParams {
  double Delta = 0.0;   // range of lag-asymptotic dependence
  double lambda = 1.0;  // scale
  double kappa = 1.0;   // shape
};

inline void validate(const AlphaParams& p) {
  require(std::isfinite(p.Delta) && p.Delta >= 0.0, "alpha: Delta must be >= 0");
  require(std::isfinite(p.lambda) && p.lambda > 0.0, "alpha: lambda must be positive");
  require(std::isfinite(p.kappa) && p.kappa > 0.0, "alpha: kappa must be positive");
}

/// alpha(h) = 1 for h < Delta, exp{-[(h - Delta)/lambda]^kappa} otherwise.
inline double alpha_fn(double dist, const AlphaParams& p) {
  require(dist >= 0.0, "alpha_fn: negative distance");
  if (dist < p.Delta) return 1.0;
  return std::exp(-std::pow((dist - p.Delta) / p.lambda, p.kappa));
}

// ---- scale normalization --------------------------------------------------

enum class BVariant { model1, model2, model3 };

inline std::string to_string(BVariant v) {
  switch (v) {
    case BVariant::model1: return "model1";
    case BVariant::model2: return "model2";
    case BVariant::model3: return "model3";
  }
  return "model3";
}

inline BVariant b_variant_from_string(const std::string& s) {
  if (s == "model1" || s == "1") return BVariant::model1;
  if (s == "model2" || s == "2") return BVariant::model2;
  if (s == "model3" || s == "3") return BVariant::model3;
  throw InvalidArgument("unknown b-model '" + s + "'");
}

/// model1: b(x) = 1 / (1 + zeta x^beta), zeta >= 0, beta < 0
/// model2: b(x) = x^beta, 0 <= beta < 1
/// model3: b(x) = 1 + (alpha(h) x)^beta, beta > 0
struct BModel {
  BVariant variant = BVariant::model3;
  double beta = 0.5;
  double zeta = 0.0;

  static BModel model1(double zeta, double beta) { return {BVariant::model1, beta, zeta}; }
  static BModel model2(double beta) { return {BVariant::model2, beta, 0.0}; }
  static BModel model3(double beta) { return {BVariant::model3, beta, 0.0}; }
};

inline void validate(const BModel& b) {
  require(std::isfinite(b.beta) && std::isfinite(b.zeta), "b-model parameters must be finite");
  switch (b.variant) {
    case BVariant::model1:
      require(b.zeta >= 0.0, "model1 requires zeta >= 0");
      require(b.beta < 0.0, "model1 requires beta < 0");
      break;
    case BVariant::model2:
      require(b.beta >= 0.0 && b.beta < 1.0, "model2 requires 0 <= beta < 1");
      break;
    case BVariant::model3:
      require(b.beta > 0.0, "model3 requires beta > 0");
      break;
  }
}

/// b given the already-evaluated alpha(h); no validation.
inline double b_value(double x, double alpha, const BModel& b) {
  switch (b.variant) {
    case BVariant::model1: return 1.0 / (1.0 + b.zeta * std::pow(x, b.beta));
    case BVariant::model2: return std::pow(x, b.beta);
    case BVariant::model3: {
      const double a = alpha * x;
      return a > 0.0 ? 1.0 + std::pow(a, b.beta) : 1.0;
    }
  }
  return 1.0;
}

inline double b_fn(double x, double dist, const AlphaParams& alpha_p, const BModel& bm) {
  require(x > 0.0, "b_fn: x must be positive");
  validate(alpha_p);
  validate(bm);
  return b_value(x, alpha_fn(dist, alpha_p), bm);
}

// ---- residual field -------------------------------------------------------

enum class ResidualVariant { conditioned, increments };

inline std::string to_string(ResidualVariant v) {
  return v == ResidualVariant::conditioned ? "conditioned" : "increments";
}

inline ResidualVariant residual_variant_from_string(const std::string& s) {
  if (s == "conditioned" || s == "i") return ResidualVariant::conditioned;
  if (s == "increments" || s == "ii") return ResidualVariant::increments;
  throw InvalidArgument("unknown residual variant '" + s + "'");
}

/// Gaussian base process and delta-Laplace margin shape for Z0.
///   conditioned: Z_G stationary, mean mu, covariance sigma^2 rho(h),
///                rho(h) = exp{-(h/phi)^nu}, taken given Z_G(s0) = 0
///   increments:  Z_G(s) - Z_G(s0) with variogram gamma(h) = (h/phi)^nu and
///                drift -gamma/2, shifted by mu
/// The margin shape is delta(h) = 1 + exp{-(h/delta1)^delta2}.
struct ResidualFieldSpec {
  ResidualVariant variant = ResidualVariant::conditioned;
  double mu = 0.0;
  double sigma = 1.0;
  double phi = 1.0;
  double nu = 1.0;
  double delta1 = 1.0;
  double delta2 = 1.0;
  // Row j holds the means of Z^j at every observation site (diagonal unused).
  std::optional<MatrixXd> empirical_means;
};

inline void validate(const ResidualFieldSpec& s) {
  require(std::isfinite(s.mu), "residual field: mu must be finite");
  require(std::isfinite(s.sigma) && s.sigma > 0.0, "residual field: sigma must be positive");
  require(std::isfinite(s.phi) && s.phi > 0.0, "residual field: phi must be positive");
  require(std::isfinite(s.nu) && s.nu > 0.0 && s.nu <= 2.0, "residual field: nu must lie in (0, 2]");
  require(std::isfinite(s.delta1) && s.delta1 > 0.0, "residual field: delta1 must be positive");
  require(std::isfinite(s.delta2) && s.delta2 > 0.0, "residual field: delta2 must be positive");
  if (s.empirical_means) require(s.empirical_means->rows() == s.empirical_means->cols(), "empirical means must be square");
}

inline double correlation(double dist, const ResidualFieldSpec& s) { return std::exp(-std::pow(dist / s.phi, s.nu)); }

inline double variogram(double dist, const ResidualFieldSpec& s) { return std::pow(dist / s.phi, s.nu); }

inline double delta_shape(double dist, const ResidualFieldSpec& s) {
  return 1.0 + std::exp(-std::pow(dist / s.delta1, s.delta2));
}

/// All dependence parameters of the conditional model.
struct ConditionalModelParams {
  AlphaParams alpha;
  BModel b;
  ResidualFieldSpec z;
};

inline void validate(const ConditionalModelParams& p) {
  validate(p.alpha);
  validate(p.b);
  validate(p.z);
}

struct GaussMoments {
  VectorXd mean;
  MatrixXd cov;
};

/// Row of the empirical-means matrix for conditioning site `cond`, restricted
/// to `sites`; empty when the spec carries no empirical means.
inline std::optional<VectorXd> empirical_mean_override(const ResidualFieldSpec& spec, int cond,
                                                       const std::vector<int>& sites) {
  if (!spec.empirical_means) return std::nullopt;
  const MatrixXd& m = *spec.empirical_means;
  require(cond >= 0 && cond < m.rows(), "empirical means: conditioning index out of range");
  VectorXd out(static_cast<Eigen::Index>(sites.size()));
  for (std::size_t k = 0; k < sites.size(); ++k) {
    require(sites[k] >= 0 && sites[k] < m.cols(), "empirical means: site index out of range");
    out[static_cast<Eigen::Index>(k)] = m(cond, sites[k]);
  }
  return out;
}

/// Distances from the conditioning location (h0) and between sites (H).
struct SiteDistances {
  VectorXd h0;
  MatrixXd H;
};

inline SiteDistances site_distances(const Locations& sites, const Point& s0) {
  const auto m = sites.rows();
  SiteDistances d{VectorXd(m), MatrixXd(m, m)};
  for (Eigen::Index k = 0; k < m; ++k) {
    d.h0[k] = distance(sites.row(k), s0);
    d.H(k, k) = 0.0;
    for (Eigen::Index l = 0; l < k; ++l) d.H(k, l) = d.H(l, k) = distance(sites.row(k), sites.row(l));
  }
  return d;
}

/// Mean and covariance of the Gaussian block of Z0 from site distances; the
/// conditioning location must not coincide with any site.
inline GaussMoments residual_gauss_moments(const SiteDistances& dist, const ResidualFieldSpec& spec,
                                           const std::optional<VectorXd>& mean_override = std::nullopt) {
  validate(spec);
  const auto m = dist.h0.size();
  const VectorXd& h0 = dist.h0;
  for (Eigen::Index k = 0; k < m; ++k)
    require(h0[k] > 0.0, "residual field: conditioning location coincides with site " + std::to_string(k));
  GaussMoments g{VectorXd(m), MatrixXd(m, m)};
  if (spec.variant == ResidualVariant::conditioned) {
    VectorXd r0(m);
    for (Eigen::Index k = 0; k < m; ++k) r0[k] = correlation(h0[k], spec);
    const double s2 = spec.sigma * spec.sigma;
    for (Eigen::Index k = 0; k < m; ++k) {
      g.mean[k] = spec.mu * (1.0 - r0[k]);
      for (Eigen::Index l = 0; l <= k; ++l) {
        const double rkl = k == l ? 1.0 : correlation(dist.H(k, l), spec);
        g.cov(k, l) = g.cov(l, k) = s2 * (rkl - r0[k] * r0[l]);
      }
    }
  } else {
    VectorXd v0(m);
    for (Eigen::Index k = 0; k < m; ++k) v0[k] = variogram(h0[k], spec);
    for (Eigen::Index k = 0; k < m; ++k) {
      g.mean[k] = spec.mu - 0.5 * v0[k];
      for (Eigen::Index l = 0; l <= k; ++l) {
        const double vkl = k == l ? 0.0 : variogram(dist.H(k, l), spec);
        g.cov(k, l) = g.cov(l, k) = 0.5 * (v0[k] + v0[l] - vkl);
      }
    }
  }
  if (mean_override) {
    require(mean_override->size() == m, "residual field: mean override has the wrong length");
    g.mean = *mean_override;
  }
  return g;
}

/// Mean and covariance of the Gaussian block of Z0 at `sites`, given the
/// conditioning location s0 (which must not be one of `sites`).
inline GaussMoments residual_gauss_moments(const Locations& sites, const Point& s0, const ResidualFieldSpec& spec,
                                           const std::optional<VectorXd>& mean_override = std::nullopt) {
  return residual_gauss_moments(site_distances(sites, s0), spec, mean_override);
}

namespace detail {

// Cholesky with a single deterministic ridge retry: 1e-10 * trace / m.
inline Eigen::LLT<MatrixXd> robust_cholesky(const MatrixXd& cov, const char* what) {
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return llt;
  const double ridge = 1e-10 * cov.trace() / static_cast<double>(cov.rows());
  MatrixXd bumped = cov;
  bumped.diagonal().array() += ridge;
  llt.compute(bumped);
  if (llt.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << what << ": covariance not positive definite after ridge " << ridge << " (dim " << cov.rows()
        << ", min diag " << cov.diagonal().minCoeff() << ", trace " << cov.trace() << ")";
    throw NumericalError(msg.str());
  }
  return llt;
}

}  // namespace detail

/// Z0 at a fixed set of sites for a fixed conditioning location: Gaussian
/// moments, their Cholesky factor, and the matched delta-Laplace margins.
class ResidualField {
 public:
  ResidualField(const SiteDistances& dist, const ResidualFieldSpec& spec,
                const std::optional<VectorXd>& mean_override = std::nullopt)
      : moments_(residual_gauss_moments(dist, spec, mean_override)),
        llt_(detail::robust_cholesky(moments_.cov, "residual field")) {
    const auto m = dist.h0.size();
    sd_ = moments_.cov.diagonal().array().sqrt();
    log_diag_sum_ = llt_.matrixLLT().diagonal().array().log().sum();
    margins_.reserve(static_cast<std::size_t>(m));
    for (Eigen::Index k = 0; k < m; ++k)
      margins_.push_back(DeltaLaplace::with_variance(moments_.mean[k], sd_[k] * sd_[k], delta_shape(dist.h0[k], spec)));
  }

  ResidualField(const Locations& sites, const Point& s0, const ResidualFieldSpec& spec,
                const std::optional<VectorXd>& mean_override = std::nullopt)
      : ResidualField(site_distances(sites, s0), spec, mean_override) {}

  int size() const { return static_cast<int>(margins_.size()); }
  const GaussMoments& moments() const { return moments_; }
  const VectorXd& gauss_sd() const { return sd_; }
  const std::vector<DeltaLaplace>& margins() const { return margins_; }
  const Eigen::LLT<MatrixXd>& cholesky() const { return llt_; }

  /// Standard normal scores Phi^{-1}(F_k(z_k)).
  VectorXd normal_scores(const Eigen::Ref<const VectorXd>& z) const {
    VectorXd u(z.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) u[k] = margins_[static_cast<std::size_t>(k)].normal_score(z[k]);
    return u;
  }

  /// Log density of each row of `z` (n x m). With `checked`, throws
  /// NumericalError naming the first row whose density is not finite.
  VectorXd log_density_rows(const Eigen::Ref<const MatrixXd>& z, bool checked = true) const {
    require(z.cols() == size(), "residual density: wrong number of columns");
    const auto n = z.rows();
    const auto m = z.cols();
    MatrixXd scaled(m, n);  // column i: sd * u for row i
    VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double marg = 0.0;
      double uu = 0.0;
      for (Eigen::Index k = 0; k < m; ++k) {
        double u, lp;
        margins_[static_cast<std::size_t>(k)].score_and_log_pdf(z(i, k), u, lp);
        marg += lp;
        uu += u * u;
        scaled(k, i) = sd_[k] * u;
      }
      out[i] = marg + 0.5 * uu;
    }
    llt_.matrixL().solveInPlace(scaled);
    const double const_term = -log_diag_sum_ + sd_.array().log().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      out[i] += const_term - 0.5 * scaled.col(i).squaredNorm();
      if (checked && !std::isfinite(out[i]))
        throw NumericalError("residual density not finite at row " + std::to_string(i));
    }
    return out;
  }

  double log_density(const Eigen::Ref<const VectorXd>& z) const {
    require(z.allFinite(), "residual density: non-finite input");
    return log_density_rows(z.transpose())[0];
  }

  /// One draw of Z0 into `out` (length m).
  template <class Out>
  void sample_into(Rng& gen, Out&& out) const {
    std::normal_distribution<double> normal;
    VectorXd e(size());
    for (auto& v : e) v = normal(gen);
    const VectorXd g = llt_.matrixL() * e;
    for (int k = 0; k < size(); ++k) out[k] = margins_[static_cast<std::size_t>(k)].from_normal_score(g[k] / sd_[k]);
  }

 private:
  GaussMoments moments_;
  Eigen::LLT<MatrixXd> llt_;
  VectorXd sd_;
  double log_diag_sum_ = 0.0;
  std::vector<DeltaLaplace> margins_;
};

/// Log density of Z0 at `sites` (conditioning location s0).
inline double residual_log_density(const VectorXd& z, const Locations& sites, const Point& s0,
                                   const ResidualFieldSpec& spec,
                                   const std::optional<VectorXd>& mean_override = std::nullopt) {
  require(z.size() == sites.rows(), "residual_log_density: one value per site expected");
  return ResidualField(sites, s0, spec, mean_override).log_density(z);
}

/// nsims x m draws of Z0; deterministic given seed.
inline MatrixXd residual_sample(int nsims, const Locations& sites, const Point& s0, const ResidualFieldSpec& spec,
                                std::uint64_t seed, const std::optional<VectorXd>& mean_override = std::nullopt) {
  require(nsims >= 1, "residual_sample: nsims must be positive");
  const ResidualField field(sites, s0, spec, mean_override);
  MatrixXd out(nsims, sites.rows());
  Rng gen = make_rng(seed);
  for (int i = 0; i < nsims; ++i) field.sample_into(gen, out.row(i));
  return out;
}

}  // namespace condex
