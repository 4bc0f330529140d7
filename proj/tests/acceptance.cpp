// Acceptance checks, one per criterion. Usage: acceptance [N ...]; with no
// arguments every criterion runs. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include "cli_support.hpp"
#include "condex/condex.hpp"
#include "support.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <iostream>
#include <sstream>
#include <thread>

using namespace condex;
namespace ct = condex::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int workers() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

// ---- 1 --------------------------------------------------------------------------

void criterion1(Outcome& o) {
  const auto t0 = Clock::now();
  using boost::math::quadrature::gauss_kronrod;
  const double inf = std::numeric_limits<double>::infinity();

  const DeltaLaplaceParams g{0.4, 1.3, 2.0};
  const double s = g.sigma / std::sqrt(2.0);
  double worst_pdf = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double z = g.mu - 6.0 * g.sigma + 12.0 * g.sigma * i / 1000.0;
    const double ref = std::exp(-0.5 * ((z - g.mu) / s) * ((z - g.mu) / s)) / (s * std::sqrt(2.0 * std::numbers::pi));
    worst_pdf = std::max(worst_pdf, std::fabs(dl_pdf(z, g) - ref));
  }
  o.check(worst_pdf <= 1e-12, "delta=2 pdf vs Gaussian");

  double worst_cdf = 0.0;
  for (double delta : {0.5, 1.0, 1.74, 2.0, 3.0}) {
    const DeltaLaplaceParams p{0.3, 1.1, delta};
    auto f = [&](double z) { return dl_pdf(z, p); };
    const double left = gauss_kronrod<double, 61>::integrate(f, -inf, p.mu, 15, 1e-14);
    for (int i = 0; i <= 24; ++i) {
      const double z = p.mu - 6.0 * p.sigma + 0.5 * p.sigma * i;
      const double ref = z <= p.mu ? gauss_kronrod<double, 61>::integrate(f, -inf, z, 15, 1e-14)
                                   : left + gauss_kronrod<double, 61>::integrate(f, p.mu, z, 15, 1e-14);
      worst_cdf = std::max(worst_cdf, std::fabs(dl_cdf(z, p) - ref));
    }
  }
  o.check(worst_cdf <= 1e-8, "cdf vs quadrature");

  double worst_z = 0.0;
  const int n = 1000000;
  for (double delta : {0.5, 1.0, 1.74, 2.0, 3.0}) {
    const DeltaLaplaceParams p{0.5, 1.2, delta};
    const auto x = dl_sample(static_cast<std::size_t>(n), p, 42);
    double m = 0.0;
    for (double v : x) m += v;
    m /= n;
    double s2 = 0.0;
    for (double v : x) s2 += (v - m) * (v - m);
    s2 /= n - 1;
    const double var = boost::math::tgamma(3.0 / delta) / boost::math::tgamma(1.0 / delta) * p.sigma * p.sigma;
    const double m4 = boost::math::tgamma(5.0 / delta) / boost::math::tgamma(1.0 / delta) * std::pow(p.sigma, 4);
    worst_z = std::max(worst_z, std::fabs(s2 - var) / std::sqrt((m4 - var * var) / n));
  }
  o.check(worst_z < 3.0, "sampler variance");
  const double secs = seconds_since(t0);
  o.check(secs < 10.0, "runtime");
  o.detail << "max|pdf-N|=" << worst_pdf << " max|cdf-quad|=" << worst_cdf << " max var z=" << worst_z << " time=" << secs
           << "s";
}

// ---- 2 --------------------------------------------------------------------------

VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

void criterion2(Outcome& o) {
  const auto t0 = Clock::now();
  const auto data = ct::gaussian_laplace_dataset(ct::line_sites({0.0, 0.45, 1.1, 1.6, 2.4}), 1.5, 1.2, 800, 202);
  const double u = laplace_threshold(0.95);
  int exceed = 0;
  for (int j = 0; j < data.num_sites(); ++j) exceed += static_cast<int>((data.observations.col(j).array() > u).count());

  ConditionalModelParams p;
  p.alpha = {0.0, 1.6, 0.9};
  p.b = BModel::model3(0.35);
  p.z.mu = 0.15;
  p.z.sigma = 1.1;
  p.z.phi = 1.3;
  p.z.nu = 1.2;
  p.z.delta1 = 1.4;
  p.z.delta2 = 0.9;

  double worst = 0.0;
  for (auto variant : {ResidualVariant::conditioned, ResidualVariant::increments}) {
    p.z.variant = variant;
    const double ours = composite_nll(data, u, p);
    const double ref = ct::reference_composite_nll(data, u, p);
    worst = std::max(worst, std::fabs(ours - ref) / std::max(1.0, std::fabs(ref)));
  }
  o.check(worst <= 1e-8, "nll vs reference");

  // Gradient in the unconstrained coordinates: central differences of the
  // library likelihood against a Richardson-extrapolated gradient of the
  // reference.
  p.z.variant = ResidualVariant::conditioned;
  const ParamCodec codec(p);
  const VectorXd x = codec.encode(p);
  auto ours = [&](const VectorXd& y) { return composite_nll(data, u, codec.decode(y)); };
  auto ref = [&](const VectorXd& y) { return ct::reference_composite_nll(data, u, codec.decode(y)); };
  const VectorXd g_fd = fd_gradient(ours, x, 1e-5);
  const VectorXd r1 = fd_gradient(ref, x, 2e-3);
  const VectorXd r2 = fd_gradient(ref, x, 1e-3);
  const VectorXd g_rich = r2 + (r2 - r1) / 3.0;
  const double grad_rel = (g_fd - g_rich).norm() / std::max(1.0, g_rich.norm());
  o.check(grad_rel < 1e-4, "gradient agreement");
  const double secs = seconds_since(t0);
  o.check(secs < 30.0, "runtime");
  o.check(exceed >= 180 && exceed <= 220, "about 200 exceedances");
  o.detail << "exceedances=" << exceed << " max rel nll diff=" << worst << " grad rel err=" << grad_rel << " time=" << secs
           << "s";
}

// ---- 3 --------------------------------------------------------------------------

void criterion3(Outcome& o) {
  const auto t0 = Clock::now();
  const double phi = 2.0, nu = 1.0;
  const Locations locs = ct::line_sites({0.0, 0.4, 1.0, 1.7, 2.5});
  const auto raw = ct::gaussian_dataset(locs, phi, nu, 50000, 303);
  const auto lap = to_laplace(raw).first;
  FitConfig cfg;
  cfg.b_variant = BVariant::model3;
  cfg.workers = workers();
  const auto fitted = fit(lap, laplace_threshold(0.975), cfg);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < locs.rows(); ++i)
    for (Eigen::Index j = i + 1; j < locs.rows(); ++j) {
      const double h = distance(locs.row(i), locs.row(j));
      const double rho = std::exp(-std::pow(h / phi, nu));
      worst = std::max(worst, std::fabs(alpha_fn(h, fitted.params.alpha) - rho * rho));
    }
  o.check(worst <= 0.1, "alpha within 0.1 of rho^2");
  const double secs = seconds_since(t0);
  o.check(secs < 600.0, "runtime");
  o.detail << "max|alpha-rho^2|=" << worst << " lambda=" << fitted.params.alpha.lambda
           << " kappa=" << fitted.params.alpha.kappa << " converged=" << fitted.info.converged << " time=" << secs << "s";
}

// ---- 4 --------------------------------------------------------------------------

void criterion4(Outcome& o) {
  // Symmetric discretized bivariate law on a grid; both margins equal so the
  // mixture proposal gives each atom mass proportional to count * q.
  const double v = 1.0;
  std::vector<RowVectorXd> atoms;
  std::vector<long> q;
  for (int a = -3; a <= 6; ++a)
    for (int b = -3; b <= 6; ++b) {
      const double x = 0.5 * a, y = 0.5 * b;
      atoms.push_back((RowVectorXd(2) << x, y).finished());
      q.push_back(std::lround(1000.0 * std::exp(-0.5 * (x * x + y * y - 1.2 * x * y) / 0.64)) + 1);
    }
  auto g = [](const RowVectorXd& x) { return x[0] * x[1] + std::exp(0.3 * x[0]) - (x.array() > 1.0).all(); };

  double num = 0.0, den = 0.0;
  for (std::size_t a = 0; a < atoms.size(); ++a)
    if (atoms[a].maxCoeff() > v) {
      num += static_cast<double>(q[a]) * g(atoms[a]);
      den += static_cast<double>(q[a]);
    }
  const double direct = num / den;

  std::vector<int> rows;
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    const long c = (atoms[a].array() > v).count();
    for (long r = 0; r < c * q[a]; ++r) rows.push_back(static_cast<int>(a));
  }
  ImportanceSample s;
  s.v = v;
  s.draws.resize(static_cast<Eigen::Index>(rows.size()), 2);
  s.weight.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& x = atoms[static_cast<std::size_t>(rows[i])];
    const int c = static_cast<int>((x.array() > v).count());
    s.draws.row(static_cast<Eigen::Index>(i)) = x;
    s.exceed_count.push_back(c);
    s.component.push_back(x[0] > v ? 0 : 1);
    s.weight[static_cast<Eigen::Index>(i)] = 1.0 / c;
  }
  const double est = importance_estimate(s, g).value;
  o.check(std::fabs(est - direct) <= 1e-12, "enumeration identity");
  o.detail << "estimate=" << est << " direct=" << direct << " |diff|=" << std::fabs(est - direct) << " rows=" << rows.size();
}

// ---- 5 & 6 --------------------------------------------------------------------------

struct BruteForce {
  double exceed = 0.0;      // replicates with max > v
  double all_exceed = 0.0;  // replicates with all > v
  double n = 0.0;
};

BruteForce brute_force(const ct::GaussianCopulaSampler& sampler, double v, long total, std::uint64_t seed) {
  BruteForce b;
  const int chunk = 500000;
  for (long done = 0, c = 0; done < total; done += chunk, ++c) {
    const MatrixXd x = sampler.brute_force(chunk, seed + static_cast<std::uint64_t>(c));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (x.row(i).maxCoeff() > v) b.exceed += 1.0;
      if (x.row(i).minCoeff() > v) b.all_exceed += 1.0;
    }
    b.n += chunk;
  }
  return b;
}

const ct::GaussianCopulaSampler& three_site_model() {
  static const ct::GaussianCopulaSampler s(ct::exchangeable_corr(3, 0.6));
  return s;
}

void criterion5(Outcome& o) {
  const auto t0 = Clock::now();
  const auto& sampler = three_site_model();
  for (double q : {0.975, 0.995}) {
    const double v = laplace_threshold(q);
    auto all = [v](const RowVectorXd& x) { return (x.array() > v).all() ? 1.0 : 0.0; };
    const auto is = draw_importance_sample(sampler, v, 1000000, 501, workers());
    const auto e = importance_estimate(is, all);

    const auto rej = sim_rejection(sampler, VectorXd::Constant(3, 1.0 / 3.0), v, 200000, 502, workers());
    double pr = 0.0;
    for (Eigen::Index i = 0; i < rej.draws.rows(); ++i) pr += all(rej.draws.row(i));
    pr /= static_cast<double>(rej.draws.rows());
    const double se_r = std::sqrt(pr * (1.0 - pr) / static_cast<double>(rej.draws.rows()));

    const auto bf = brute_force(sampler, v, 10000000, 503);
    const double pb = bf.all_exceed / bf.exceed;
    const double se_b = std::sqrt(pb * (1.0 - pb) / bf.exceed);

    const double z_is_rej = std::fabs(e.value - pr) / std::hypot(e.se, se_r);
    const double z_is_bf = std::fabs(e.value - pb) / std::hypot(e.se, se_b);
    const double z_rej_bf = std::fabs(pr - pb) / std::hypot(se_r, se_b);
    o.check(z_is_rej < 3.0 && z_is_bf < 3.0 && z_rej_bf < 3.0, "agreement at q=" + std::to_string(q));
    o.detail << "q=" << q << ": IS=" << e.value << "(" << e.se << ") rej=" << pr << "(" << se_r << ") brute=" << pb << "("
             << se_b << ") z=" << z_is_rej << "/" << z_is_bf << "/" << z_rej_bf << "; ";
  }
  const double secs = seconds_since(t0);
  o.check(secs < 300.0, "runtime");
  o.detail << "time=" << secs << "s";
}

void criterion6(Outcome& o) {
  const auto& sampler = three_site_model();
  for (double q : {0.975, 0.995}) {
    const double v = laplace_threshold(q);
    const auto e = unconditional_prob(sampler, v, 1000000, 601, workers());
    const auto bf = brute_force(sampler, v, 10000000, 602);
    const double p = bf.exceed / bf.n;
    const double se = std::sqrt(p * (1.0 - p) / bf.n);
    const double z = std::fabs(e.value - p) / std::hypot(e.se, se);
    o.check(z < 3.0, "agreement at q=" + std::to_string(q));
    o.detail << "q=" << q << ": estimate=" << e.value << "(" << e.se << ") brute=" << p << "(" << se << ") z=" << z << "; ";
  }
}

// ---- 7 --------------------------------------------------------------------------

void criterion7(Outcome& o) {
  const Locations locs = ct::grid_sites(3, 3, 1.0, 1.0);
  FittedModel fm;
  fm.params.alpha = {0.0, 1.5, 1.0};
  fm.params.b = BModel::model3(0.3);
  fm.params.z.mu = 0.1;
  fm.params.z.sigma = 1.0;
  fm.params.z.phi = 1.2;
  fm.params.z.nu = 1.2;
  fm.params.z.delta1 = 1e300;  // delta(h) = 2 at every lag
  fm.params.z.delta2 = 1.0;
  fm.locations = locs;
  fm.threshold_u = laplace_threshold(0.95);

  InfillInput in;
  in.cond_site = 4;
  in.x_cond = 4.5;
  in.observed_sites = {0, 2, 6, 7};
  in.observed_values = (VectorXd(4) << 1.5, 3.0, 2.2, 3.9).finished();
  Locations targets(3, 2);
  targets << 0.5, 0.5, 1.5, 1.8, 2.4, 0.3;
  const Point s0 = locs.row(in.cond_site);

  // closed-form Gaussian conditioning from the residual moments
  Locations all(7, 2);
  for (int k = 0; k < 4; ++k) all.row(k) = locs.row(in.observed_sites[static_cast<std::size_t>(k)]);
  all.bottomRows(3) = targets;
  const auto g = residual_gauss_moments(all, s0, fm.params.z);
  VectorXd zD(4);
  for (int k = 0; k < 4; ++k) {
    const double a = alpha_fn(distance(all.row(k), s0), fm.params.alpha);
    zD[k] = (in.observed_values[k] - a * in.x_cond) / b_value(in.x_cond, a, fm.params.b);
  }
  const MatrixXd Sdd = g.cov.topLeftCorner(4, 4);
  const MatrixXd Sdl = g.cov.topRightCorner(4, 3);
  const Eigen::FullPivLU<MatrixXd> lu(Sdd);
  const VectorXd mu_c = g.mean.tail(3) + Sdl.transpose() * lu.solve(zD - g.mean.head(4));
  const MatrixXd cov_c = g.cov.bottomRightCorner(3, 3) - Sdl.transpose() * lu.solve(Sdl);
  VectorXd a(3), b(3);
  for (int l = 0; l < 3; ++l) {
    a[l] = alpha_fn(distance(targets.row(l), s0), fm.params.alpha);
    b[l] = b_value(in.x_cond, a[l], fm.params.b);
  }
  const VectorXd mean_x = a * in.x_cond + b.cwiseProduct(mu_c);
  const MatrixXd cov_x = b.asDiagonal() * cov_c * b.asDiagonal();

  const int n = 100000;
  const MatrixXd x = infill_sim(fm, in, targets, n, 701, workers());
  const RowVectorXd m = x.colwise().mean();
  const MatrixXd centered = x.rowwise() - m;
  const MatrixXd s = centered.transpose() * centered / (n - 1.0);
  double worst_mean = 0.0, worst_cov = 0.0;
  for (int k = 0; k < 3; ++k) {
    worst_mean = std::max(worst_mean, std::fabs(m[k] - mean_x[k]) / std::sqrt(cov_x(k, k) / n));
    for (int l = 0; l < 3; ++l) {
      const double se = std::sqrt((cov_x(k, k) * cov_x(l, l) + cov_x(k, l) * cov_x(k, l)) / n);
      worst_cov = std::max(worst_cov, std::fabs(s(k, l) - cov_x(k, l)) / se);
    }
  }
  o.check(worst_mean < 3.0, "means within 3 SE");
  o.check(worst_cov < 3.0, "covariances within 3 SE");
  const auto mo = infill_moments(fm, in, targets);
  const double moment_err = std::max((mo.cond_mean - mu_c).cwiseAbs().maxCoeff(), (mo.cond_cov - cov_c).cwiseAbs().maxCoeff());
  o.check(moment_err < 1e-9, "reported conditional moments");
  o.detail << "max mean z=" << worst_mean << " max cov z=" << worst_cov << " moment err=" << moment_err;
}

// ---- 8 --------------------------------------------------------------------------

void criterion8(Outcome& o) {
  const auto t0 = Clock::now();
  const std::string dir = std::string(CONDEX_DATA_DIR) + "/demo72/";
  const auto raw = io::read_dataset(dir + "locations.csv", dir + "observations.csv");
  const auto lap = to_laplace(raw).first;
  FitConfig cfg;
  cfg.workers = workers();
  auto fitted = fit(lap, laplace_threshold(0.975), cfg);
  // refit-z step: residual field refitted around the empirical residual means
  const auto refit = refit_residuals(extract_residuals(lap, fitted), lap.locations, fitted.params.z);
  fitted.params.z = refit.spec;
  std::vector<int> sites(static_cast<std::size_t>(lap.num_sites()));
  std::iota(sites.begin(), sites.end(), 0);
  const std::vector<double> qs{0.975, 0.99, 0.995, 0.999, 0.9999};
  const auto rows = expected_exceedances(fitted, sites, qs, 20000, 801, &lap, workers());
  const auto& r0 = rows.front();
  const bool inside = r0.empirical_lo && r0.estimate >= *r0.empirical_lo && r0.estimate <= *r0.empirical_hi;
  o.check(inside, "model within empirical interval at q=0.975");
  bool monotone = true;
  for (std::size_t k = 0; k + 1 < rows.size(); ++k)
    monotone = monotone && rows[k + 1].estimate <= rows[k].estimate + 3.0 * std::hypot(rows[k].se, rows[k + 1].se);
  o.check(monotone, "non-increasing curve");
  const double secs = seconds_since(t0);
  o.check(secs < 600.0, "runtime");
  o.detail << "curve:";
  for (const auto& r : rows) o.detail << " " << r.q << "=" << r.estimate << "(" << r.se << ")";
  o.detail << " empirical@0.975=" << r0.empirical.value_or(std::nan("")) << " ["
           << r0.empirical_lo.value_or(std::nan("")) << ", " << r0.empirical_hi.value_or(std::nan(""))
           << "] fit evals=" << fitted.info.evaluations << " refit excluded=" << refit.excluded_sites.size() << " time=" << secs << "s";
}

// ---- 9 --------------------------------------------------------------------------

void criterion9(Outcome& o) {
  const auto t0 = Clock::now();
  // block lengths
  const auto b = stationary_bootstrap(1100000, 10.0, 901);
  const std::size_t nb = b.block_lengths.size() - 1;  // last block may be truncated
  double mean = 0.0;
  for (std::size_t k = 0; k < nb; ++k) mean += b.block_lengths[k];
  mean /= static_cast<double>(nb);
  const double se = std::sqrt(90.0 / static_cast<double>(nb));
  o.check(nb >= 100000, "at least 1e5 blocks");
  o.check(std::fabs(mean - 10.0) < 3.0 * se, "block mean");
  o.detail << "blocks=" << nb << " mean=" << mean << " (se " << se << "); ";

  // bootstrap of fit() on data generated from a known model
  ConditionalModelParams truth;
  truth.alpha = {0.0, 1.4, 1.1};
  truth.b = BModel::model3(0.3);
  truth.z.mu = 0.2;
  truth.z.sigma = 1.0;
  truth.z.phi = 1.5;
  truth.z.nu = 1.2;
  truth.z.delta1 = 1.2;
  truth.z.delta2 = 1.4;
  const Locations locs = ct::grid_sites(2, 2, 0.8, 0.9);
  const double u = laplace_threshold(0.95);
  const auto data = ct::model_dataset(truth, locs, u, 300, 3000, 902);
  FitConfig cfg;
  cfg.max_evaluations = 1500;
  cfg.workers = workers();
  FitConfig full_cfg = cfg;
  full_cfg.start = truth;
  const auto full = fit(data, u, full_cfg);
  const auto boot = bootstrap_fit(data, u, cfg, full.params, 100, 10.0, 903);
  int bracketed = 0;
  for (std::size_t k = 0; k < boot.names.size(); ++k) {
    const auto col = boot.estimates.col(static_cast<Eigen::Index>(k));
    const double t = parameter_value(truth, boot.names[k]);
    const bool ok = col.minCoeff() <= t && t <= col.maxCoeff();
    bracketed += ok;
    o.detail << boot.names[k] << (ok ? "" : "*") << "=" << t << "[" << col.minCoeff() << "," << col.maxCoeff() << "] ";
  }
  o.check(boot.names.size() == 9, "nine free parameters");
  o.check(bracketed >= 8, "truth bracketed for >= 8 of 9");
  o.detail << "bracketed=" << bracketed << "/" << boot.names.size() << " time=" << seconds_since(t0) << "s";
}

// ---- 10 --------------------------------------------------------------------------

void criterion10(Outcome& o) {
  const fs::path dir = fs::temp_directory_path() / "condex_acceptance_determinism";
  fs::remove_all(dir);
  const auto cfg = ct::make_pipeline_fixture(dir);
  std::map<std::string, std::string> runs[2];
  for (int r = 0; r < 2; ++r) {
    fs::remove_all(dir / "out");
    const std::string failed = ct::run_pipeline(cfg, dir);
    o.check(failed.empty(), "subcommand '" + failed + "' failed");
    if (!failed.empty()) {
      o.detail << ct::slurp(dir / (failed + ".log"));
      fs::remove_all(dir);
      return;
    }
    runs[r] = ct::directory_contents(dir / "out");
  }
  int differing = 0;
  for (const auto& [name, content] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != content) {
      ++differing;
      o.detail << "differs: " << name << " ";
    }
  }
  o.check(differing == 0 && runs[0].size() == runs[1].size(), "byte-identical outputs");
  std::set<std::string> manifests;
  for (const auto& [name, content] : runs[0])
    if (name.starts_with("manifest_")) manifests.insert(name);
  o.check(manifests.size() == ct::pipeline_subcommands().size(), "one manifest per subcommand");
  o.detail << "subcommands=" << manifests.size() << " files=" << runs[0].size();
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<void(Outcome&)>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                            criterion5, criterion6, criterion7, criterion8,
                                                            criterion9, criterion10};
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (int c = 1; c <= 10; ++c) which.push_back(c);
  bool all_pass = true;
  for (int c : which) {
    if (c < 1 || c > 10) {
      std::cerr << "unknown criterion " << c << "\n";
      return 2;
    }
    Outcome o;
    try {
      criteria[static_cast<std::size_t>(c - 1)](o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " " << o.detail.str() << std::endl;
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
