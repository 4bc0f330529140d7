#pragma once

// Thin-plate-spline deformation of the plane, tau = affine + sum of radial
// basis terms at anchor sites, fitted so that pairwise dependence depends on
// deformed distance only.

#include "condex/core.hpp"
#include "condex/margins.hpp"
#include "condex/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace condex {

struct DeformationParams {
  double kappa_d = 1.0;
  double lambda_d = 1.0;
  double psi = 0.0;
  std::vector<int> anchor_indices;
  Locations anchors;  // anchor coordinates, one row per anchor
  MatrixXd omega;     // 2 x anchors

  int num_anchors() const { return static_cast<int>(anchors.rows()); }
};

/// Identity deformation carrying the given anchors.
inline DeformationParams identity_deformation(const Locations& anchors, std::vector<int> indices = {}) {
  DeformationParams p;
  p.anchors = anchors;
  p.anchor_indices = std::move(indices);
  p.omega = MatrixXd::Zero(2, anchors.rows());
  return p;
}

/// xi_i(s) = r^2 log(r^2) / 2, r the distance from s to anchor i; 0 at r = 0.
inline VectorXd tps_basis(const Point& s, const Locations& anchors) {
  require(s.allFinite(), "tps_basis: non-finite coordinate");
  VectorXd xi(anchors.rows());
  for (Eigen::Index i = 0; i < anchors.rows(); ++i) {
    const double r2 = (s - anchors.row(i)).squaredNorm();
    xi[i] = r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0;
  }
  return xi;
}

/// Rows 1, x, y of the anchor coordinates; omega rows must be orthogonal to
/// all three.
inline MatrixXd tps_constraint_matrix(const Locations& anchors) {
  MatrixXd c(3, anchors.rows());
  c.row(0).setOnes();
  c.row(1) = anchors.col(0).transpose();
  c.row(2) = anchors.col(1).transpose();
  return c;
}

/// Orthogonal projector onto the null space of the constraint matrix.
inline MatrixXd tps_null_projector(const Locations& anchors) {
  const MatrixXd c = tps_constraint_matrix(anchors);
  const auto n = anchors.rows();
  return MatrixXd::Identity(n, n) - c.transpose() * (c * c.transpose()).ldlt().solve(c);
}

inline double constraint_violation(const DeformationParams& p) {
  if (p.num_anchors() == 0) return 0.0;
  return (p.omega * tps_constraint_matrix(p.anchors).transpose()).cwiseAbs().maxCoeff();
}

inline void validate(const DeformationParams& p) {
  require(p.kappa_d > 0.0 && p.lambda_d > 0.0, "deformation: kappa and lambda must be positive");
  require(std::isfinite(p.psi), "deformation: psi must be finite");
  require(p.omega.rows() == 2 && p.omega.cols() == p.anchors.rows(), "deformation: omega must be 2 x anchors");
  const double scale = 1.0 + (p.anchors.size() ? p.anchors.cwiseAbs().maxCoeff() : 0.0);
  const double wscale = 1e-300 + p.omega.cwiseAbs().maxCoeff();
  require(constraint_violation(p) <= 1e-9 * scale * wscale, "deformation: omega violates the thin-plate constraints");
}

namespace detail {

inline Point tau_unchecked(const Point& s, const DeformationParams& p) {
  const double kl = p.psi * p.kappa_d * p.lambda_d;
  Point out(p.kappa_d * p.kappa_d * s[0] + kl * s[1], kl * s[0] + p.lambda_d * p.lambda_d * s[1]);
  if (p.num_anchors() > 0) {
    const VectorXd xi = tps_basis(s, p.anchors);
    out[0] += p.omega.row(0).dot(xi);
    out[1] += p.omega.row(1).dot(xi);
  }
  return out;
}

// Jacobian determinant of tau at s.
inline double tau_jacobian_det(const Point& s, const DeformationParams& p) {
  const double kl = p.psi * p.kappa_d * p.lambda_d;
  Eigen::Matrix2d j;
  j << p.kappa_d * p.kappa_d, kl, kl, p.lambda_d * p.lambda_d;
  for (Eigen::Index i = 0; i < p.anchors.rows(); ++i) {
    const Point d = s - p.anchors.row(i);
    const double r2 = d.squaredNorm();
    if (r2 == 0.0) continue;
    const double f = std::log(r2) + 1.0;  // d xi / d s = d (log r^2 + 1)
    for (int r = 0; r < 2; ++r) {
      j(r, 0) += p.omega(r, i) * d[0] * f;
      j(r, 1) += p.omega(r, i) * d[1] * f;
    }
  }
  return j.determinant();
}

}  // namespace detail

inline Point tau_apply(const Point& s, const DeformationParams& p) {
  validate(p);
  return detail::tau_unchecked(s, p);
}

inline Locations tau_apply(const Locations& sites, const DeformationParams& p) {
  validate(p);
  Locations out(sites.rows(), 2);
  for (Eigen::Index i = 0; i < sites.rows(); ++i) out.row(i) = detail::tau_unchecked(sites.row(i), p);
  return out;
}

/// Smallest Jacobian determinant of tau over a grid on the bounding box of
/// `sites`; positive means no folding was detected.
inline double min_jacobian_det(const Locations& sites, const DeformationParams& p, int grid = 25) {
  const Point lo = sites.colwise().minCoeff();
  const Point hi = sites.colwise().maxCoeff();
  double out = std::numeric_limits<double>::infinity();
  for (int a = 0; a < grid; ++a)
    for (int b = 0; b < grid; ++b) {
      const double ta = grid > 1 ? static_cast<double>(a) / (grid - 1) : 0.5;
      const double tb = grid > 1 ? static_cast<double>(b) / (grid - 1) : 0.5;
      const Point s(lo[0] + ta * (hi[0] - lo[0]), lo[1] + tb * (hi[1] - lo[1]));
      out = std::min(out, detail::tau_jacobian_det(s, p));
    }
  return out;
}

// ---- fitting ------------------------------------------------------------------

enum class DependenceMeasure { correlation, chi };

struct TauFitConfig {
  DependenceMeasure measure = DependenceMeasure::correlation;
  double chi_level = 0.95;
  int max_evaluations = 8000;
  int grid = 20;  // folding check resolution per axis
};

/// Fitted curve g(h) = c0 exp{-(h / range)^power} on deformed distances.
struct DependenceCurve {
  double c0 = 1.0;
  double range = 1.0;
  double power = 1.0;
  double operator()(double h) const { return c0 * std::exp(-std::pow(h / range, power)); }
};

struct TauFitResult {
  DeformationParams params;
  DependenceCurve curve;
  double objective = 0.0;           // at the fitted deformation
  double identity_objective = 0.0;  // best curve with tau = identity
  bool converged = false;
};

/// Pairwise dependence estimates for all i < j, in row-major pair order.
inline std::vector<double> pairwise_dependence(const SpatialDataset& data, DependenceMeasure measure, double q) {
  const int d = data.num_sites();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(d * (d - 1) / 2));
  if (measure == DependenceMeasure::correlation) {
    const MatrixXd x = data.observations.rowwise() - data.observations.colwise().mean();
    const VectorXd sd = (x.array().square().colwise().sum()).sqrt();
    const MatrixXd gram = x.transpose() * x;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) out.push_back(gram(i, j) / (sd[i] * sd[j]));
    return out;
  }
  require(q > 0.0 && q < 1.0, "chi level must lie in (0, 1)");
  const int n = data.num_replicates();
  std::vector<std::vector<char>> above(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    const auto r = average_ranks(data.observations.col(j));
    auto& a = above[static_cast<std::size_t>(j)];
    a.resize(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) a[static_cast<std::size_t>(t)] = r[static_cast<std::size_t>(t)] / (n + 1.0) > q;
  }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      int joint = 0;
      for (int t = 0; t < n; ++t)
        joint += above[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] && above[static_cast<std::size_t>(j)][static_cast<std::size_t>(t)];
      out.push_back(joint / (n * (1.0 - q)));
    }
  return out;
}

inline double mean_pairwise_distance(const Locations& s) {
  double total = 0.0;
  long count = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = i + 1; j < s.rows(); ++j) {
      total += distance(s.row(i), s.row(j));
      ++count;
    }
  return count ? total / static_cast<double>(count) : 1.0;
}

/// Rescales tau so that deformed sites keep the original mean pairwise
/// distance.
inline DeformationParams normalize_scale(const DeformationParams& p, const Locations& sites) {
  const double c = mean_pairwise_distance(sites) / mean_pairwise_distance(tau_apply(sites, p));
  DeformationParams out = p;
  out.kappa_d *= std::sqrt(c);
  out.lambda_d *= std::sqrt(c);
  out.omega *= c;
  return out;
}

namespace detail {

inline double curve_sse(const std::vector<double>& dep, const Locations& coords, const DependenceCurve& g) {
  double sse = 0.0;
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    for (Eigen::Index j = i + 1; j < coords.rows(); ++j, ++k) {
      const double r = dep[k] - g(distance(coords.row(i), coords.row(j)));
      sse += r * r;
    }
  return sse;
}

inline DependenceCurve decode_curve(double a, double b, double c) {
  return {1.0 / (1.0 + std::exp(-a)), std::exp(b), 2.0 / (1.0 + std::exp(-c))};
}

// Best curve for fixed coordinates.
inline std::pair<DependenceCurve, double> fit_curve(const std::vector<double>& dep, const Locations& coords) {
  const double mpd = mean_pairwise_distance(coords);
  const Objective f = [&](const VectorXd& x) { return curve_sse(dep, coords, decode_curve(x[0], x[1], x[2])); };
  VectorXd x0(3);
  x0 << 2.0, std::log(mpd), 0.0;
  NelderMeadOptions o;
  o.max_evaluations = 2000;
  o.f_tolerance = 1e-12;
  const auto r = nelder_mead(f, x0, o);
  return {decode_curve(r.x[0], r.x[1], r.x[2]), r.value};
}

}  // namespace detail

/// Least-squares fit of (tau, curve) to pairwise dependence estimates, with
/// the thin-plate weights projected onto their constraint set and folding
/// penalized.
inline TauFitResult tau_fit(const SpatialDataset& data, const std::vector<int>& anchors, const TauFitConfig& cfg = {}) {
  validate(data);
  require(anchors.size() >= 3, "deformation needs at least three anchors");
  for (int a : anchors) require(a >= 0 && a < data.num_sites(), "anchor index out of range");
  const Locations anchor_xy = select_rows(data.locations, anchors);
  {
    const MatrixXd c = tps_constraint_matrix(anchor_xy);
    require(Eigen::FullPivLU<MatrixXd>(c).rank() == 3, "anchors must not be collinear");
  }
  const auto dep = pairwise_dependence(data, cfg.measure, cfg.chi_level);
  const MatrixXd proj = tps_null_projector(anchor_xy);
  const int na = static_cast<int>(anchors.size());
  const double mpd = mean_pairwise_distance(data.locations);
  // omega enters with r^2 log r^2 ~ mpd^2 log; scale the free weights so unit
  // steps move sites by O(mpd).
  const double wscale = 1.0 / (mpd * std::max(1.0, std::log(mpd * mpd)));

  // x = (t, atanh psi, curve a, b, c, raw omega row 0, raw omega row 1)
  auto decode = [&](const VectorXd& x) {
    DeformationParams p = identity_deformation(anchor_xy, anchors);
    p.kappa_d = std::exp(0.5 * x[0]);
    p.lambda_d = std::exp(-0.5 * x[0]);
    p.psi = std::tanh(x[1]);
    for (int r = 0; r < 2; ++r) {
      const VectorXd w = proj * (wscale * x.segment(5 + r * na, na));
      p.omega.row(r) = (proj * w).transpose();  // second pass removes cancellation error
    }
    return p;
  };
  const Objective f = [&](const VectorXd& x) {
    const DeformationParams p = normalize_scale(decode(x), data.locations);
    double penalty = 0.0;
    const double det = min_jacobian_det(data.locations, p, cfg.grid);
    if (!(det > 0.0)) penalty = 1e3 * (1.0 + std::fabs(det));
    const Locations coords = tau_apply(data.locations, p);
    return detail::curve_sse(dep, coords, detail::decode_curve(x[2], x[3], x[4])) + penalty;
  };

  TauFitResult res;
  const auto [g0, sse0] = detail::fit_curve(dep, data.locations);
  res.identity_objective = sse0;
  VectorXd x0 = VectorXd::Zero(5 + 2 * na);
  x0[2] = std::log(g0.c0 / (1.0 - g0.c0));
  x0[3] = std::log(g0.range);
  x0[4] = std::log(g0.power / (2.0 - g0.power));
  NelderMeadOptions o;
  o.max_evaluations = cfg.max_evaluations;
  o.f_tolerance = 1e-12;
  o.restarts = 2;
  const auto r = nelder_mead(f, x0, o);
  res.params = normalize_scale(decode(r.x), data.locations);
  res.curve = detail::decode_curve(r.x[2], r.x[3], r.x[4]);
  res.objective = r.value;
  res.converged = r.converged;
  return res;
}

/// Same dataset with coordinates replaced by their images under tau.
inline SpatialDataset deform_dataset(const SpatialDataset& data, const DeformationParams& p) {
  SpatialDataset out = data;
  out.locations = tau_apply(data.locations, p);
  return out;
}

}  // namespace condex
