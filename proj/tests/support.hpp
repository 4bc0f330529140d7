#pragma once

// Shared fixtures for the test suite: synthetic data generators, exact
// component samplers and an independent likelihood reference built on
// Boost.Math rather than the library's own special functions.

#include "condex/condex.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace condex::testing {

inline Locations line_sites(const std::vector<double>& xs) {
  Locations l(static_cast<Eigen::Index>(xs.size()), 2);
  for (std::size_t k = 0; k < xs.size(); ++k) l.row(static_cast<Eigen::Index>(k)) = Point(xs[k], 0.0);
  return l;
}

inline Locations grid_sites(int nx, int ny, double dx, double dy) {
  Locations l(nx * ny, 2);
  for (int r = 0; r < ny; ++r)
    for (int c = 0; c < nx; ++c) l.row(r * nx + c) = Point(c * dx, r * dy);
  return l;
}

inline MatrixXd powexp_corr(const Locations& locs, double phi, double nu) {
  const auto d = locs.rows();
  MatrixXd c(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) c(i, j) = std::exp(-std::pow(distance(locs.row(i), locs.row(j)) / phi, nu));
  return c;
}

/// n iid Gaussian fields with correlation `corr`; returned on the standard
/// normal scale.
inline MatrixXd gaussian_fields(const MatrixXd& corr, int n, std::uint64_t seed) {
  const MatrixXd L = Eigen::LLT<MatrixXd>(corr).matrixL();
  Rng gen = make_rng(seed);
  std::normal_distribution<double> normal;
  MatrixXd out(n, corr.rows());
  VectorXd e(corr.rows());
  for (int i = 0; i < n; ++i) {
    for (auto& x : e) x = normal(gen);
    out.row(i) = (L * e).transpose();
  }
  return out;
}

/// Exact probability integral transform N(0,1) -> standard Laplace.
inline double normal_to_laplace(double g) {
  return g < 0.0 ? std::log(std::erfc(-g / std::numbers::sqrt2)) : -std::log(std::erfc(g / std::numbers::sqrt2));
}

inline double laplace_to_normal(double x) {
  return x < 0.0 ? -std::sqrt(2.0) * boost::math::erfc_inv(std::exp(x)) : std::sqrt(2.0) * boost::math::erfc_inv(std::exp(-x));
}

/// Gaussian-copula dataset on raw (standard normal) margins.
inline SpatialDataset gaussian_dataset(const Locations& locs, double phi, double nu, int n, std::uint64_t seed) {
  SpatialDataset d;
  d.locations = locs;
  d.observations = gaussian_fields(powexp_corr(locs, phi, nu), n, seed);
  d.margin = MarginTag::raw;
  return d;
}

/// Same fields mapped exactly to Laplace margins.
inline SpatialDataset gaussian_laplace_dataset(const Locations& locs, double phi, double nu, int n,
                                               std::uint64_t seed) {
  SpatialDataset d = gaussian_dataset(locs, phi, nu, n, seed);
  d.observations = d.observations.unaryExpr([](double g) { return normal_to_laplace(g); });
  d.margin = MarginTag::laplace;
  return d;
}

/// Exact conditional laws of a Gaussian copula with Laplace margins: the
/// conditioning coordinate is v + Exp(1) and the rest follow Gaussian
/// conditioning on its normal score.
class GaussianCopulaSampler {
 public:
  explicit GaussianCopulaSampler(const MatrixXd& corr) : corr_(corr) {
    const auto m = corr.rows();
    for (Eigen::Index j = 0; j < m; ++j) {
      Part p;
      for (Eigen::Index k = 0; k < m; ++k)
        if (k != j) p.others.push_back(static_cast<int>(k));
      const auto r = static_cast<Eigen::Index>(p.others.size());
      p.coef.resize(r);
      MatrixXd cov(r, r);
      for (Eigen::Index a = 0; a < r; ++a) {
        p.coef[a] = corr(p.others[static_cast<std::size_t>(a)], j);
        for (Eigen::Index b = 0; b < r; ++b)
          cov(a, b) = corr(p.others[static_cast<std::size_t>(a)], p.others[static_cast<std::size_t>(b)]);
      }
      cov -= p.coef * p.coef.transpose();
      p.L = Eigen::LLT<MatrixXd>(cov).matrixL();
      parts_.push_back(std::move(p));
    }
  }

  int dimension() const { return static_cast<int>(corr_.rows()); }

  void draw(int j, double v, Rng& gen, Eigen::Ref<RowVectorXd> out) const {
    std::exponential_distribution<double> expo(1.0);
    std::normal_distribution<double> normal;
    const auto& p = parts_[static_cast<std::size_t>(j)];
    const double x0 = v + expo(gen);
    out[j] = x0;
    const double g0 = laplace_to_normal(x0);
    VectorXd e(p.coef.size());
    for (auto& x : e) x = normal(gen);
    const VectorXd g = p.coef * g0 + p.L * e;
    for (std::size_t k = 0; k < p.others.size(); ++k) out[p.others[k]] = normal_to_laplace(g[static_cast<Eigen::Index>(k)]);
  }

  /// Unconditional draws on Laplace margins.
  MatrixXd brute_force(int n, std::uint64_t seed) const {
    return gaussian_fields(corr_, n, seed).unaryExpr([](double g) { return normal_to_laplace(g); });
  }

 private:
  struct Part {
    std::vector<int> others;
    VectorXd coef;
    MatrixXd L;
  };
  MatrixXd corr_;
  std::vector<Part> parts_;
};

inline MatrixXd exchangeable_corr(int m, double rho) {
  MatrixXd c = MatrixXd::Constant(m, m, rho);
  c.diagonal().setOnes();
  return c;
}

// ---- independent likelihood reference ---------------------------------------------

/// Composite negative log-likelihood written directly from the model
/// definition: Boost incomplete gamma for the delta-Laplace cdf, Boost normal
/// quantile, and a dense LU for the Gaussian copula density.
inline double reference_composite_nll(const SpatialDataset& data, double u, const ConditionalModelParams& p) {
  namespace bm = boost::math;
  const bm::normal stdnorm;
  const int d = data.num_sites();
  double total = 0.0;
  for (int j = 0; j < d; ++j) {
    std::vector<int> others;
    for (int k = 0; k < d; ++k)
      if (k != j) others.push_back(k);
    const auto m = static_cast<Eigen::Index>(others.size());
    const Point s0 = data.location(j);
    VectorXd h0(m), mean(m), alpha(m), delta(m), scale(m);
    MatrixXd cov(m, m);
    for (Eigen::Index a = 0; a < m; ++a) h0[a] = (data.location(others[static_cast<std::size_t>(a)]) - s0).norm();
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) {
        const double hab = (data.location(others[static_cast<std::size_t>(a)]) - data.location(others[static_cast<std::size_t>(b)])).norm();
        if (p.z.variant == ResidualVariant::conditioned) {
          const double ra = std::exp(-std::pow(h0[a] / p.z.phi, p.z.nu));
          const double rb = std::exp(-std::pow(h0[b] / p.z.phi, p.z.nu));
          const double rab = std::exp(-std::pow(hab / p.z.phi, p.z.nu));
          cov(a, b) = p.z.sigma * p.z.sigma * (rab - ra * rb);
        } else {
          const double ga = std::pow(h0[a] / p.z.phi, p.z.nu);
          const double gb = std::pow(h0[b] / p.z.phi, p.z.nu);
          const double gab = std::pow(hab / p.z.phi, p.z.nu);
          cov(a, b) = 0.5 * (ga + gb - gab);
        }
      }
      mean[a] = p.z.variant == ResidualVariant::conditioned ? p.z.mu * (1.0 - std::exp(-std::pow(h0[a] / p.z.phi, p.z.nu)))
                                                            : p.z.mu - 0.5 * std::pow(h0[a] / p.z.phi, p.z.nu);
      alpha[a] = h0[a] < p.alpha.Delta ? 1.0 : std::exp(-std::pow((h0[a] - p.alpha.Delta) / p.alpha.lambda, p.alpha.kappa));
      delta[a] = 1.0 + std::exp(-std::pow(h0[a] / p.z.delta1, p.z.delta2));
      // variance of delta-Laplace(sigma_dl) is Gamma(3/delta)/Gamma(1/delta) sigma_dl^2
      scale[a] = std::sqrt(cov(a, a) * bm::tgamma(1.0 / delta[a]) / bm::tgamma(3.0 / delta[a]));
    }
    const VectorXd sd = cov.diagonal().array().sqrt();
    const MatrixXd corr = sd.asDiagonal().inverse() * cov * sd.asDiagonal().inverse();
    const Eigen::FullPivLU<MatrixXd> lu(corr);
    const MatrixXd corr_inv = lu.inverse();
    const double log_det = std::log(std::fabs(lu.determinant()));

    for (int i = 0; i < data.num_replicates(); ++i) {
      const double x0 = data.observations(i, j);
      if (!(x0 > u)) continue;
      VectorXd y(m);
      double ll = 0.0;
      for (Eigen::Index a = 0; a < m; ++a) {
        double b = 1.0;
        switch (p.b.variant) {
          case BVariant::model1: b = 1.0 / (1.0 + p.b.zeta * std::pow(x0, p.b.beta)); break;
          case BVariant::model2: b = std::pow(x0, p.b.beta); break;
          case BVariant::model3: b = 1.0 + std::pow(alpha[a] * x0, p.b.beta); break;
        }
        const double z = (data.observations(i, others[static_cast<std::size_t>(a)]) - alpha[a] * x0) / b;
        const double r = std::fabs(z - mean[a]) / scale[a];
        const double t = std::pow(r, delta[a]);
        const double log_f = std::log(delta[a]) - std::log(2.0 * scale[a]) - bm::lgamma(1.0 / delta[a]) - t;
        const double tail = 0.5 * bm::gamma_q(1.0 / delta[a], t);
        y[a] = z >= mean[a] ? -bm::quantile(stdnorm, tail) : bm::quantile(stdnorm, tail);
        ll += log_f - std::log(b) + 0.5 * y[a] * y[a];
      }
      ll += -0.5 * y.dot(corr_inv * y) - 0.5 * log_det;
      total -= ll;
    }
  }
  return total;
}

// ---- model-generated data ---------------------------------------------------------

/// Laplace-scale dataset whose extreme rows come from the fitted model's
/// mixture law given max > u (importance subsample) and whose remaining rows
/// lie below u at every site.
inline SpatialDataset model_dataset(const ConditionalModelParams& params, const Locations& locs, double u, int n_extreme,
                                    int n_total, std::uint64_t seed) {
  FittedModel fm;
  fm.params = params;
  fm.locations = locs;
  fm.threshold_u = u;
  const int d = static_cast<int>(locs.rows());
  std::vector<int> sites(static_cast<std::size_t>(d));
  std::iota(sites.begin(), sites.end(), 0);
  const auto s = draw_importance_sample(fm, sites, u, 10 * n_extreme, seed);
  const auto pick = importance_subsample(s, n_extreme, seed + 1);
  SpatialDataset data;
  data.locations = locs;
  data.margin = MarginTag::laplace;
  data.observations.resize(n_total, d);
  Rng gen = make_rng(seed + 2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // below-u filler from the Laplace law truncated to (-inf, u)
  const double top = laplace_cdf(u);
  for (int i = 0; i < n_total; ++i)
    for (int k = 0; k < d; ++k) {
      double w = unif(gen) * top;
      while (w <= 0.0) w = unif(gen) * top;
      data.observations(i, k) = laplace_quantile(w);
    }
  std::vector<int> slots(static_cast<std::size_t>(n_total));
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), gen);
  for (int i = 0; i < n_extreme; ++i) data.observations.row(slots[static_cast<std::size_t>(i)]) = s.draws.row(pick[static_cast<std::size_t>(i)]);
  return data;
}

}  // namespace condex::testing
