#pragma once

// Delta-Laplace (exponential power) distribution and Laplace/exponential
// helpers.
//
// The cdf is not a closed form in elementary functions. With t = |z-mu|^d / s^d
// the mass beyond |z - mu| is Gamma(1/d, t) / Gamma(1/d), the regularized upper
// incomplete gamma function Q(1/d, t), so
//   F(z) = 1 - Q(1/d, t) / 2   for z >= mu,
//   F(z) =     Q(1/d, t) / 2   for z <  mu.
// The normal score Phi^{-1}(F(z)) therefore equals sign(z - mu) * sqrt(2) *
// erfc^{-1}(Q(1/d, t)), which is what the Gaussian-copula code consumes.

#include "condex/core.hpp"
#include "condex/special.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace condex {

struct DeltaLaplaceParams {
  double mu = 0.0;
  double sigma = 1.0;
  double delta = 1.0;
};

inline void validate(const DeltaLaplaceParams& p) {
  require(std::isfinite(p.mu), "delta-Laplace: location must be finite");
  require(std::isfinite(p.sigma) && p.sigma > 0.0, "delta-Laplace: scale must be positive");
  require(std::isfinite(p.delta) && p.delta > 0.0, "delta-Laplace: shape must be positive");
}

/// Var(Z) / sigma^2 = Gamma(3/delta) / Gamma(1/delta).
inline double dl_variance_factor(double delta) {
  return std::exp(std::lgamma(3.0 / delta) - std::lgamma(1.0 / delta));
}

/// Delta-Laplace law with its normalizing constants precomputed. Value type;
/// cheap to copy.
class DeltaLaplace {
 public:
  explicit DeltaLaplace(const DeltaLaplaceParams& p) : p_(p) {
    validate(p_);
    shape_ = 1.0 / p_.delta;
    lgamma_shape_ = std::lgamma(shape_);
    log_norm_ = std::log(p_.delta) - std::numbers::ln2 - std::log(p_.sigma) - lgamma_shape_;
  }

  /// Scale chosen so that the variance is `variance`.
  static DeltaLaplace with_variance(double mu, double variance, double delta) {
    return DeltaLaplace({mu, std::sqrt(variance / dl_variance_factor(delta)), delta});
  }

  const DeltaLaplaceParams& params() const { return p_; }
  double mean() const { return p_.mu; }
  double variance() const { return dl_variance_factor(p_.delta) * p_.sigma * p_.sigma; }

  double log_pdf(double z) const { return log_norm_ - power_term(z); }

  double pdf(double z) const { return std::exp(log_pdf(z)); }

  double cdf(double z) const {
    const double half_tail = 0.5 * special::gamma_q(shape_, power_term(z), lgamma_shape_);
    return z >= p_.mu ? 1.0 - half_tail : half_tail;
  }

  /// log of the mass beyond |z - mu| on one side, i.e. log min(F, 1 - F).
  double log_tail(double z) const {
    return special::log_gamma_q(shape_, power_term(z), lgamma_shape_) - std::numbers::ln2;
  }

  /// Phi^{-1}(F(z)), kept accurate in both tails.
  double normal_score(double z) const {
    if (z == p_.mu) return 0.0;
    return score_from_power(z, power_term(z));
  }

  /// normal_score(z) and log_pdf(z) sharing one evaluation of the power term.
  void score_and_log_pdf(double z, double& score, double& log_density) const {
    const double t = power_term(z);
    log_density = log_norm_ - t;
    score = z == p_.mu ? 0.0 : score_from_power(z, t);
  }

  /// F^{-1}(Phi(y)).
  double from_normal_score(double y) const {
    if (y == 0.0) return p_.mu;
    const double q = std::erfc(std::fabs(y) / std::numbers::sqrt2);  // twice the tail mass
    const double r = radius_for_tail(q);
    return y > 0.0 ? p_.mu + r : p_.mu - r;
  }

  double quantile(double level) const {
    require(level > 0.0 && level < 1.0, "delta-Laplace quantile: level must lie in (0, 1)");
    if (level == 0.5) return p_.mu;
    const double tail = level > 0.5 ? 1.0 - level : level;
    double r;
    if (p_.delta == 1.0) {
      r = -p_.sigma * std::log(2.0 * tail);
    } else if (p_.delta == 2.0) {
      r = -p_.sigma / std::numbers::sqrt2 * special::normal_quantile(tail);
    } else {
      r = radius_for_tail(2.0 * tail);
    }
    return level > 0.5 ? p_.mu + r : p_.mu - r;
  }

  template <class Gen>
  double sample(Gen& gen) const {
    std::gamma_distribution<double> gamma(shape_, 1.0);
    std::bernoulli_distribution sign(0.5);
    const double g = gamma(gen);
    const double r = p_.sigma * std::pow(g, shape_);
    return sign(gen) ? p_.mu + r : p_.mu - r;
  }

 private:
  double score_from_power(double z, double t) const {
    const double q = special::gamma_q(shape_, t, lgamma_shape_);
    double y;
    if (q > 1e-290) {
      y = -special::normal_quantile(0.5 * q);
    } else {
      y = special::normal_upper_score_from_log(special::log_gamma_q(shape_, t, lgamma_shape_) -
                                               std::numbers::ln2);
    }
    return z > p_.mu ? y : -y;
  }

  // (|z - mu| / sigma)^delta, via logs so huge ratios saturate instead of
  // producing NaN.
  double power_term(double z) const {
    const double r = std::fabs(z - p_.mu) / p_.sigma;
    if (r == 0.0) return 0.0;
    return std::exp(p_.delta * std::log(r));
  }

  // |z - mu| whose two-sided tail mass Q(1/delta, t) equals q.
  double radius_for_tail(double q) const {
    const double t = special::gamma_q_inv(shape_, q);
    return p_.sigma * std::pow(t, shape_);
  }

  DeltaLaplaceParams p_;
  double shape_ = 1.0;
  double lgamma_shape_ = 0.0;
  double log_norm_ = 0.0;
};

inline double dl_pdf(double z, const DeltaLaplaceParams& p) {
  require(std::isfinite(z), "dl_pdf: argument must be finite");
  return DeltaLaplace(p).pdf(z);
}

inline double dl_log_pdf(double z, const DeltaLaplaceParams& p) {
  require(std::isfinite(z), "dl_log_pdf: argument must be finite");
  return DeltaLaplace(p).log_pdf(z);
}

inline double dl_cdf(double z, const DeltaLaplaceParams& p) {
  const DeltaLaplace law(p);
  if (z == std::numeric_limits<double>::infinity()) return 1.0;
  if (z == -std::numeric_limits<double>::infinity()) return 0.0;
  require(!std::isnan(z), "dl_cdf: argument is NaN");
  return law.cdf(z);
}

inline double dl_quantile(double level, const DeltaLaplaceParams& p) { return DeltaLaplace(p).quantile(level); }

inline std::vector<double> dl_sample(std::size_t n, const DeltaLaplaceParams& p, std::uint64_t seed) {
  require(n >= 1, "dl_sample: n must be at least 1");
  const DeltaLaplace law(p);
  Rng gen = make_rng(seed);
  std::vector<double> out(n);
  for (auto& x : out) x = law.sample(gen);
  return out;
}

// ---- Laplace / exponential helpers -------------------------------------

inline double laplace_cdf(double x) { return x < 0.0 ? 0.5 * std::exp(x) : 1.0 - 0.5 * std::exp(-x); }

inline double laplace_sf(double x) { return x < 0.0 ? 1.0 - 0.5 * std::exp(x) : 0.5 * std::exp(-x); }

inline double laplace_quantile(double p) {
  require(p > 0.0 && p < 1.0, "laplace_quantile: probability must lie in (0, 1)");
  return p < 0.5 ? std::log(2.0 * p) : -std::log(2.0 * (1.0 - p));
}

/// Threshold on the standard Laplace scale exceeded with probability 1 - q.
inline double laplace_threshold(double q) {
  require(q > 0.5 && q < 1.0, "laplace_threshold: quantile must lie in (0.5, 1)");
  return -std::log(2.0 * (1.0 - q));
}

}  // namespace condex
