#pragma once

// Double-precision special functions for the likelihood hot path. Boost is
// used for the inverse incomplete gamma function only; the forward functions
// here are evaluated millions of times per objective evaluation.

#include <boost/math/policies/policy.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <numbers>

namespace condex::special {

using fast_policy = boost::math::policies::policy<boost::math::policies::promote_double<false>>;

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

namespace detail {

inline constexpr double kEps = 1e-16;
inline constexpr double kTiny = 1e-300;
inline constexpr int kMaxIter = 500;

// log of the continued-fraction factor for Q(a, x), x >= a + 1 (modified Lentz).
inline double gamma_q_cf_log(double a, double x, double lgamma_a) {
  double b = x + 1.0 - a;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return -x + a * std::log(x) - lgamma_a + std::log(h);
}

// Series for P(a, x), x < a + 1.
inline double gamma_p_series(double a, double x, double lgamma_a) {
  if (x <= 0.0) return 0.0;
  double ap = a;
  double del = 1.0 / a;
  double sum = del;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - lgamma_a);
}

// The series is used up to a + kSeriesReach: beyond a + 1 it costs 1 - P
// cancellation (relative error of Q stays below ~1e-11 for a >= 1/2), but the
// continued fraction converges slowly there.
inline constexpr double kSeriesReach = 7.0;

}  // namespace detail

/// log Q(a, x), the regularized upper incomplete gamma function, finite for
/// arguments where Q itself underflows.
inline double log_gamma_q(double a, double x, double lgamma_a) {
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return -std::numeric_limits<double>::infinity();
  if (x < a + 1.0) return std::log1p(-detail::gamma_p_series(a, x, lgamma_a));
  if (x < a + detail::kSeriesReach) {
    const double p = detail::gamma_p_series(a, x, lgamma_a);
    if (p < 1.0 - 1e-6) return std::log1p(-p);
  }
  return detail::gamma_q_cf_log(a, x, lgamma_a);
}

inline double gamma_q(double a, double x, double lgamma_a) {
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + detail::kSeriesReach) return 1.0 - detail::gamma_p_series(a, x, lgamma_a);
  return std::exp(detail::gamma_q_cf_log(a, x, lgamma_a));
}

inline double gamma_q(double a, double x) { return gamma_q(a, x, std::lgamma(a)); }

/// x such that Q(a, x) = q.
inline double gamma_q_inv(double a, double q) {
  if (q >= 1.0) return 0.0;
  return boost::math::gamma_q_inv(a, q, fast_policy());
}

/// Standard normal lower-tail quantile (Wichura AS241, ~1e-16 relative).
inline double normal_quantile(double p) {
  if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
  if (!(p < 1.0)) return std::numeric_limits<double>::infinity();
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

/// log of the standard normal survivor function.
inline double log_normal_sf(double y) {
  if (y < 30.0) return std::log(0.5 * std::erfc(y / std::numbers::sqrt2));
  const double y2 = y * y;
  const double series = 1.0 - 1.0 / y2 + 3.0 / (y2 * y2) - 15.0 / (y2 * y2 * y2) + 105.0 / (y2 * y2 * y2 * y2);
  return -0.5 * y2 - std::log(y) - kLogSqrt2Pi + std::log(series);
}

/// y >= 0 with log P(N(0,1) > y) = log_tail, for log_tail <= log(1/2).
inline double normal_upper_score_from_log(double log_tail) {
  if (log_tail > -600.0) return -normal_quantile(std::exp(log_tail));
  // Newton on the asymptotic survivor; converges in a handful of steps.
  double y = std::sqrt(-2.0 * log_tail);
  for (int i = 0; i < 50; ++i) {
    const double f = log_normal_sf(y) - log_tail;
    // d/dy log sf(y) ~ -(y + 1/y) in the far tail
    const double step = f / (y + 1.0 / y);
    y += step;
    if (std::fabs(step) < 1e-14 * y) break;
  }
  return y;
}

inline double normal_cdf(double y) { return 0.5 * std::erfc(-y / std::numbers::sqrt2); }

inline double normal_log_pdf(double y) { return -0.5 * y * y - kLogSqrt2Pi; }

}  // namespace condex::special
