#pragma once

// Unconstrained minimizers used by the fitting code: Nelder-Mead and a BFGS
// variant driven by central finite differences.

#include "condex/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace condex {

using Objective = std::function<double(const VectorXd&)>;

struct OptimResult {
  VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  int iterations = 0;
  bool converged = false;
};

struct NelderMeadOptions {
  double initial_step = 0.5;
  int max_evaluations = 4000;
  double f_tolerance = 1e-8;  // relative spread of simplex values
  double x_tolerance = 1e-6;  // simplex diameter
  int restarts = 1;           // fresh simplex around the best point
};

namespace detail {

inline OptimResult nelder_mead_once(const Objective& f, const VectorXd& x0, double step, int budget, double ftol,
                                    double xtol) {
  const auto n = x0.size();
  std::vector<VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  OptimResult res;
  auto eval = [&](const VectorXd& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };
  for (Eigen::Index i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)][i] += step;
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = eval(pts[i]);

  std::vector<std::size_t> order(pts.size());
  while (res.evaluations + n + 2 <= budget) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];

    double diameter = 0.0;
    for (const auto& p : pts) diameter = std::max(diameter, (p - pts[best]).cwiseAbs().maxCoeff());
    const double spread = std::fabs(vals[worst] - vals[best]);
    if (std::isfinite(vals[best]) && spread <= ftol * (std::fabs(vals[best]) + 1e-10) && diameter <= xtol) {
      res.converged = true;
      break;
    }
    ++res.iterations;

    VectorXd centroid = VectorXd::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const VectorXd xc = outside ? VectorXd(centroid + 0.5 * (xr - centroid))
                                : VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = eval(pts[i]);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  res.x = pts[best];
  res.value = vals[best];
  return res;
}

}  // namespace detail

/// Nelder-Mead with restarts from the incumbent. Non-finite objective values
/// are treated as +infinity.
inline OptimResult nelder_mead(const Objective& f, const VectorXd& x0, const NelderMeadOptions& opt = {}) {
  OptimResult total;
  VectorXd x = x0;
  double step = opt.initial_step;
  for (int round = 0; round <= opt.restarts; ++round) {
    const int budget = opt.max_evaluations - total.evaluations;
    if (budget <= x0.size() + 1) break;
    auto r = detail::nelder_mead_once(f, x, step, budget, opt.f_tolerance, opt.x_tolerance);
    total.evaluations += r.evaluations;
    total.iterations += r.iterations;
    const bool improved = r.value < total.value - opt.f_tolerance * (std::fabs(total.value) + 1e-10);
    if (r.value <= total.value) {
      total.x = r.x;
      total.value = r.value;
    }
    total.converged = r.converged;
    if (round > 0 && !improved) break;
    x = total.x;
    step = std::max(opt.initial_step * 0.25, 10.0 * opt.x_tolerance);
  }
  return total;
}

/// Central-difference gradient with step h on every coordinate.
inline VectorXd fd_gradient(const Objective& f, const VectorXd& x, double h = 1e-5) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct BfgsOptions {
  int max_iterations = 200;
  int max_evaluations = 10000;
  double gradient_tolerance = 1e-5;
  double fd_step = 1e-5;
};

/// Quasi-Newton minimization with BFGS updates and backtracking line search.
inline OptimResult bfgs(const Objective& f, const VectorXd& x0, const BfgsOptions& opt = {}) {
  const auto n = x0.size();
  OptimResult res;
  auto eval = [&](const VectorXd& x) {
    ++res.evaluations;
    const double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };
  auto grad = [&](const VectorXd& x) {
    res.evaluations += static_cast<int>(2 * n);
    return fd_gradient(f, x, opt.fd_step);
  };
  VectorXd x = x0;
  double fx = eval(x);
  VectorXd g = grad(x);
  MatrixXd h_inv = MatrixXd::Identity(n, n);
  for (int it = 0; it < opt.max_iterations && res.evaluations < opt.max_evaluations; ++it) {
    res.iterations = it + 1;
    if (!g.allFinite()) break;
    if (g.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
      res.converged = true;
      break;
    }
    VectorXd p = -h_inv * g;
    if (p.dot(g) >= 0.0) {
      h_inv.setIdentity();
      p = -g;
    }
    double t = 1.0;
    double ft = eval(x + t * p);
    while (!(ft <= fx + 1e-4 * t * g.dot(p)) && t > 1e-12) {
      t *= 0.5;
      ft = eval(x + t * p);
    }
    if (!(ft <= fx + 1e-4 * t * g.dot(p))) break;
    const VectorXd s = t * p;
    x += s;
    const VectorXd g_new = grad(x);
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const MatrixXd I = MatrixXd::Identity(n, n);
      h_inv = (I - rho * s * y.transpose()) * h_inv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double f_prev = fx;
    fx = ft;
    g = g_new;
    if (std::fabs(f_prev - fx) <= 1e-12 * (std::fabs(fx) + 1e-10)) {
      res.converged = g.lpNorm<Eigen::Infinity>() < std::sqrt(opt.gradient_tolerance);
      break;
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

}  // namespace condex
