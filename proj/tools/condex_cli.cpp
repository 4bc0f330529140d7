// condex: pipeline runner for the conditional spatial extremes library.
//
//   condex <subcommand> --config FILE [--set key=value]...
//
// Subcommands: transform, explore, deform, fit, refit-z, simulate, diagnose,
// bootstrap. Every artifact lands in output_dir; a manifest per subcommand
// records the configuration hash and library version.

#include "config.hpp"

#include "condex/condex.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <unistd.h>

#ifndef CONDEX_VERSION
#define CONDEX_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace condex;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

using Outputs = std::vector<std::pair<std::string, std::string>>;

struct Context {
  cli::Config cfg;
  fs::path out_dir;
  std::uint64_t seed = 0;
  int workers = 1;
  std::vector<double> v_quantiles_override;
  std::string subset_override;
};

// ---- helpers ------------------------------------------------------------------

int resolve_site(const SpatialDataset& data, const std::string& token, const cli::Config& cfg, const std::string& key) {
  const auto it = std::find(data.site_ids.begin(), data.site_ids.end(), token);
  if (it != data.site_ids.end()) return static_cast<int>(it - data.site_ids.begin());
  try {
    std::size_t used = 0;
    const int k = std::stoi(token, &used);
    if (used == token.size() && k >= 0 && k < data.num_sites()) return k;
  } catch (const std::exception&) {
  }
  cfg.fail(key, "'" + token + "' is neither a site id nor a site index");
}

std::vector<int> parse_row_subset(const std::string& spec, int n, const cli::Config& cfg) {
  std::vector<int> rows;
  std::istringstream in(spec);
  std::string part;
  while (std::getline(in, part, ',')) {
    const auto dash = part.find('-');
    try {
      if (dash == std::string::npos) {
        rows.push_back(std::stoi(part));
      } else {
        const int a = std::stoi(part.substr(0, dash)), b = std::stoi(part.substr(dash + 1));
        if (b < a) throw std::invalid_argument("range");
        for (int r = a; r <= b; ++r) rows.push_back(r);
      }
    } catch (const std::exception&) {
      cfg.fail("subset", "invalid row range '" + part + "'");
    }
  }
  for (int r : rows)
    if (r < 0 || r >= n) cfg.fail("subset", "row " + std::to_string(r) + " out of range");
  return rows;
}

SpatialDataset apply_subset(const SpatialDataset& data, const std::string& spec, const Context& ctx) {
  if (spec.empty()) return data;
  if (spec.starts_with("rows:")) return select_replicates(data, parse_row_subset(spec.substr(5), data.num_replicates(), ctx.cfg));
  if (spec.starts_with("times:")) {
    require(!data.replicate_times.empty(), "subset by times needs a 'time' column in the observations file");
    fs::path p(spec.substr(6));
    if (!p.is_absolute()) p = fs::path(ctx.cfg.source()).parent_path() / p;
    std::ifstream in(p);
    if (!in) ctx.cfg.fail("subset", "cannot open time list '" + p.string() + "'");
    std::set<std::string> wanted;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) wanted.insert(line);
    }
    std::vector<int> rows;
    for (int i = 0; i < data.num_replicates(); ++i)
      if (wanted.count(data.replicate_times[static_cast<std::size_t>(i)])) rows.push_back(i);
    require(!rows.empty(), "subset selects no replicates");
    return select_replicates(data, rows);
  }
  ctx.cfg.fail("subset", "subset must start with 'rows:' or 'times:'");
}

fs::path need(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw InvalidArgument("missing '" + p.string() + "'; run '" + producer + "' first");
  return p;
}

SpatialDataset load_laplace(const Context& ctx) {
  const std::string coords = ctx.cfg.str("coordinates", "original");
  fs::path locs;
  if (coords == "original") {
    locs = need(ctx.out_dir / "locations.csv", "transform");
  } else if (coords == "deformed") {
    locs = need(ctx.out_dir / "locations_deformed.csv", "deform");
  } else {
    ctx.cfg.fail("coordinates", "coordinates must be 'original' or 'deformed'");
  }
  return io::read_dataset(locs.string(), need(ctx.out_dir / "laplace.csv", "transform").string(), MarginTag::laplace);
}

double threshold_quantile(const Context& ctx) {
  const double q = ctx.cfg.num("threshold_quantile", 0.975);
  if (!(q > 0.5 && q < 1.0)) ctx.cfg.fail("threshold_quantile", "threshold_quantile must lie in (0.5, 1)");
  return q;
}

FittedModel load_model(const Context& ctx) {
  const std::string which = ctx.cfg.str("model", "fit");
  if (which != "fit" && which != "refit") ctx.cfg.fail("model", "model must be 'fit' or 'refit'");
  const fs::path p = ctx.out_dir / (which == "fit" ? "fit.json" : "fit_refit.json");
  return io::fitted_from_json(io::read_json(need(p, which == "fit" ? "fit" : "refit-z").string()));
}

std::string opt_num(const std::optional<double>& v) { return v ? io::format_double(*v) : ""; }

std::string row(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  return out + "\n";
}

std::string num(double x) { return io::format_double(x); }

FitConfig fit_config(const Context& ctx) {
  FitConfig fc;
  fc.b_variant = b_variant_from_string(ctx.cfg.str("b_model", "model3"));
  fc.residual_variant = residual_variant_from_string(ctx.cfg.str("residual_variant", "conditioned"));
  fc.delta_grid = ctx.cfg.numbers("delta_grid", {0.0});
  fc.max_evaluations = static_cast<int>(ctx.cfg.integer("fit_max_evaluations", fc.max_evaluations));
  fc.seed = ctx.seed;
  fc.workers = ctx.workers;
  return fc;
}

// ---- subcommands -------------------------------------------------------------------

Outputs cmd_transform(const Context& ctx) {
  const auto raw = io::read_dataset(ctx.cfg.path("locations").string(), ctx.cfg.path("observations").string());
  const auto data = apply_subset(raw, ctx.subset_override.empty() ? ctx.cfg.str("subset", "") : ctx.subset_override, ctx);
  const auto [lap, t] = to_laplace(data);
  return {{"locations.csv", io::locations_csv(data.site_ids, data.locations)},
          {"laplace.csv", io::observations_csv(lap)},
          {"transform.json", io::dump_json(io::transform_json(t))}};
}

Outputs cmd_explore(const Context& ctx) {
  const auto data = load_laplace(ctx);
  const double q = ctx.cfg.num("explore_quantile", 0.95);
  std::string chi = "i,j,site_i,site_j,distance,chi,n_joint,low_count\n";
  for (int i = 0; i < data.num_sites(); ++i)
    for (int j = i + 1; j < data.num_sites(); ++j) {
      const auto e = chi_q(data, i, j, q);
      chi += row({std::to_string(i), std::to_string(j), data.site_ids[static_cast<std::size_t>(i)],
                  data.site_ids[static_cast<std::size_t>(j)], num(distance(data.location(i), data.location(j))),
                  num(e.chi_hat), std::to_string(e.n_joint), e.low_count ? "1" : "0"});
    }
  const int j0 = resolve_site(data, ctx.cfg.str("explore_site", "0"), ctx.cfg, "explore_site");
  std::vector<std::pair<int, int>> pairs;
  for (int k = 0; k < data.num_sites(); ++k)
    if (k != j0) pairs.emplace_back(j0, k);
  const auto fits = pairwise_fit(data, laplace_threshold(threshold_quantile(ctx)), pairs);
  std::string pw = "i,j,distance,alpha,beta,mu,sigma,delta,nll,n_i,n_j,converged\n";
  for (const auto& f : fits)
    pw += row({std::to_string(f.i), std::to_string(f.j), num(f.distance), num(f.alpha), num(f.beta), num(f.mu),
               num(f.sigma), num(f.delta), num(f.nll), std::to_string(f.n_i), std::to_string(f.n_j),
               f.converged ? "1" : "0"});
  return {{"chi.csv", chi}, {"pairwise.csv", pw}};
}

Outputs cmd_deform(const Context& ctx) {
  const auto data = io::read_dataset(need(ctx.out_dir / "locations.csv", "transform").string(),
                                     need(ctx.out_dir / "laplace.csv", "transform").string(), MarginTag::laplace);
  std::vector<int> anchors;
  for (const auto& a : ctx.cfg.list("anchors")) anchors.push_back(resolve_site(data, a, ctx.cfg, "anchors"));
  if (anchors.size() < 3) ctx.cfg.fail("anchors", "deform needs at least three anchors");
  TauFitConfig tc;
  const std::string m = ctx.cfg.str("deform_measure", "correlation");
  if (m == "chi") {
    tc.measure = DependenceMeasure::chi;
  } else if (m != "correlation") {
    ctx.cfg.fail("deform_measure", "deform_measure must be 'correlation' or 'chi'");
  }
  const auto r = tau_fit(data, anchors, tc);
  const Locations deformed = tau_apply(data.locations, r.params);
  std::string summary = "objective,identity_objective,curve_c0,curve_range,curve_power,converged\n";
  summary += row({num(r.objective), num(r.identity_objective), num(r.curve.c0), num(r.curve.range),
                  num(r.curve.power), r.converged ? "1" : "0"});
  return {{"deform.json", io::dump_json(io::deformation_json(r.params))},
          {"locations_deformed.csv", io::locations_csv(data.site_ids, deformed)},
          {"deform_summary.csv", summary}};
}

Outputs cmd_fit(const Context& ctx) {
  const auto data = load_laplace(ctx);
  const double q = threshold_quantile(ctx);
  auto fitted = fit(data, laplace_threshold(q), fit_config(ctx));
  fitted.threshold_quantile = q;
  json j = io::fitted_json(fitted);
  j["data"] = io::data_fingerprint(data);
  j["config"] = ctx.cfg.canonical();
  if (!fitted.info.converged) std::cerr << "warning: optimizer did not converge; best iterate written\n";
  return {{"fit.json", io::dump_json(j)}};
}

Outputs cmd_refit(const Context& ctx) {
  const auto data = load_laplace(ctx);
  auto fitted = io::fitted_from_json(io::read_json(need(ctx.out_dir / "fit.json", "fit").string()));
  RefitConfig rc;
  rc.min_exceedances = static_cast<int>(ctx.cfg.integer("refit_min_exceedances", 20));
  const auto res = refit_residuals(extract_residuals(data, fitted), fitted.locations, fitted.params.z, rc);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  fitted.params.z = res.spec;
  json j = io::fitted_json(fitted);
  j["refit"] = {{"nll", res.nll}, {"converged", res.converged}, {"excluded_sites", res.excluded_sites},
                {"warnings", res.warnings}};
  j["data"] = io::data_fingerprint(data);
  j["config"] = ctx.cfg.canonical();
  return {{"fit_refit.json", io::dump_json(j)}};
}

Outputs cmd_simulate(const Context& ctx) {
  const auto data = load_laplace(ctx);
  const auto fitted = load_model(ctx);
  std::vector<int> sites;
  for (const auto& s : ctx.cfg.list("simulate_sites")) sites.push_back(resolve_site(data, s, ctx.cfg, "simulate_sites"));
  if (sites.empty())
    for (int j = 0; j < data.num_sites(); ++j) sites.push_back(j);
  const auto qs = ctx.v_quantiles_override.empty()
                      ? ctx.cfg.numbers("v_quantiles", {0.975, 0.99, 0.995, 0.999, 0.9999})
                      : ctx.v_quantiles_override;
  const int nsims = static_cast<int>(ctx.cfg.integer("nsims", 10000));
  if (nsims < 2) ctx.cfg.fail("nsims", "nsims must be at least 2");
  const bool export_draws = ctx.cfg.flag("export_draws", false);

  Outputs out;
  std::string ee = "q,v,estimate,se,empirical_n,empirical,empirical_lo,empirical_hi\n";
  std::string up = "q,v,probability,se\n";
  for (std::size_t k = 0; k < qs.size(); ++k) {
    const double q = qs[k];
    if (!(q > 0.5 && q < 1.0)) ctx.cfg.fail("v_quantiles", "quantile levels must lie in (0.5, 1)");
    ExceedanceRow r;
    r.q = q;
    r.v = laplace_threshold(q);
    if (r.v < fitted.threshold_u - 1e-12) ctx.cfg.fail("v_quantiles", "quantile level below the fitted threshold");
    const std::uint64_t s = ctx.seed + 7919 * static_cast<std::uint64_t>(k);
    const auto sample = draw_importance_sample(fitted, sites, r.v, nsims, s, ctx.workers);
    const double v = r.v;
    const auto e = importance_estimate(sample, [v](const RowVectorXd& x) { return static_cast<double>((x.array() > v).count()); });
    r.estimate = e.value;
    r.se = e.se;
    fill_empirical(r, data, sites);
    ee += row({num(r.q), num(r.v), num(r.estimate), num(r.se), std::to_string(r.empirical_n), opt_num(r.empirical),
               opt_num(r.empirical_lo), opt_num(r.empirical_hi)});
    const auto p = unconditional_prob(sample);
    up += row({num(q), num(r.v), num(p.value), num(p.se)});
    if (export_draws) {
      std::vector<std::string> header;
      for (int j : sites) header.push_back(data.site_ids[static_cast<std::size_t>(j)]);
      const std::string tag = "q" + num(q);
      out.emplace_back("draws_" + tag + ".csv", io::matrix_csv(header, sample.draws));
      json side = {{"schema_version", io::kSchemaVersion}, {"v", r.v},          {"q", q},
                   {"seed", s},                           {"sites", header},   {"component", sample.component},
                   {"weight", std::vector<double>(sample.weight.data(), sample.weight.data() + sample.weight.size())}};
      out.emplace_back("draws_" + tag + ".json", io::dump_json(side));
    }
  }
  out.insert(out.begin(), {{"expected_exceedances.csv", ee}, {"unconditional.csv", up}});
  return out;
}

Outputs cmd_diagnose(const Context& ctx) {
  const auto data = load_laplace(ctx);
  const auto fitted = load_model(ctx);
  const int samples = static_cast<int>(ctx.cfg.integer("kendall_samples", 10000));
  const auto kc = kendall_independence_check(data, fitted, samples, ctx.seed);
  std::string kt = "site,n,tau_mean,tau_variance,mean_inside,variance_inside,band_lo,band_hi,band_n\n";
  for (const auto& r : kc.rows)
    kt += row({data.site_ids[static_cast<std::size_t>(r.site)], std::to_string(r.n), num(r.tau_mean),
               num(r.tau_variance), r.mean_inside ? "1" : "0", r.variance_inside ? "1" : "0", num(kc.band_lo),
               num(kc.band_hi), std::to_string(kc.band_n)});
  Outputs out{{"kendall.csv", kt}};

  const auto pair_tokens = ctx.cfg.list("diagnose_pairs");
  if (!pair_tokens.empty()) {
    const int j = resolve_site(data, ctx.cfg.str("diagnose_site", "0"), ctx.cfg, "diagnose_site");
    std::vector<std::pair<int, int>> pairs;
    std::vector<std::string> header;
    for (const auto& t : pair_tokens) {
      const auto colon = t.find(':');
      if (colon == std::string::npos) ctx.cfg.fail("diagnose_pairs", "pairs are written as a:b");
      const int a = resolve_site(data, t.substr(0, colon), ctx.cfg, "diagnose_pairs");
      const int b = resolve_site(data, t.substr(colon + 1), ctx.cfg, "diagnose_pairs");
      if (a == j || b == j) ctx.cfg.fail("diagnose_pairs", "the conditioning site must not appear in the pairs");
      pairs.emplace_back(a, b);
      header.push_back(data.site_ids[static_cast<std::size_t>(a)] + "_" + data.site_ids[static_cast<std::size_t>(b)] + "_a");
      header.push_back(data.site_ids[static_cast<std::size_t>(a)] + "_" + data.site_ids[static_cast<std::size_t>(b)] + "_b");
    }
    const int nsims = static_cast<int>(ctx.cfg.integer("nsims", 10000));
    const auto ov = model_vs_data_pairs(fitted, data, j, pairs, nsims, ctx.seed);
    out.emplace_back("overlay_observed.csv", io::matrix_csv(header, ov.observed));
    out.emplace_back("overlay_simulated.csv", io::matrix_csv(header, ov.simulated));
  }
  return out;
}

Outputs cmd_bootstrap(const Context& ctx) {
  const auto data = load_laplace(ctx);
  const auto fitted = io::fitted_from_json(io::read_json(need(ctx.out_dir / "fit.json", "fit").string()));
  const int reps = static_cast<int>(ctx.cfg.integer("bootstrap_replicates", 100));
  const double block = ctx.cfg.num("bootstrap_block", 10.0);
  if (reps < 1) ctx.cfg.fail("bootstrap_replicates", "bootstrap_replicates must be positive");
  FitConfig fc = fit_config(ctx);
  fc.b_variant = fitted.params.b.variant;
  fc.residual_variant = fitted.params.z.variant;
  fc.delta_grid = {fitted.params.alpha.Delta};
  const auto res = bootstrap_fit(data, fitted.threshold_u, fc, fitted.params, reps, block, ctx.seed);

  std::string table = "replicate";
  for (const auto& n : res.names) table += "," + n;
  table += ",converged\n";
  for (Eigen::Index b = 0; b < res.estimates.rows(); ++b) {
    table += std::to_string(b);
    for (Eigen::Index k = 0; k < res.estimates.cols(); ++k) table += "," + num(res.estimates(b, k));
    table += res.converged[static_cast<std::size_t>(b)] ? ",1\n" : ",0\n";
  }
  std::string summary = "parameter,estimate,q025,q975,min,max\n";
  for (std::size_t k = 0; k < res.names.size(); ++k) {
    std::vector<double> v(static_cast<std::size_t>(res.estimates.rows()));
    for (Eigen::Index b = 0; b < res.estimates.rows(); ++b) v[static_cast<std::size_t>(b)] = res.estimates(b, static_cast<Eigen::Index>(k));
    std::sort(v.begin(), v.end());
    auto at = [&](double p) { return v[static_cast<std::size_t>(std::floor(p * static_cast<double>(v.size() - 1)))]; };
    summary += row({res.names[k], num(parameter_value(fitted.params, res.names[k])), num(at(0.025)), num(at(0.975)),
                    num(v.front()), num(v.back())});
  }
  return {{"bootstrap.csv", table}, {"bootstrap_summary.csv", summary}};
}

// ---- output handling -------------------------------------------------------------------

/// Writes every output to a temporary file, then renames all of them into
/// place; on failure the temporaries are removed and nothing is published.
void publish(const fs::path& dir, const Outputs& outputs) {
  fs::create_directories(dir);
  std::vector<std::pair<fs::path, fs::path>> staged;
  const std::string suffix = ".partial-" + std::to_string(::getpid());
  try {
    for (const auto& [name, content] : outputs) {
      const fs::path tmp = dir / (name + suffix);
      staged.emplace_back(tmp, dir / name);
      std::ofstream f(tmp, std::ios::binary);
      f << content;
      f.close();
      if (!f) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    }
    for (const auto& [tmp, final_path] : staged) fs::rename(tmp, final_path);
  } catch (...) {
    for (const auto& [tmp, final_path] : staged) {
      std::error_code ec;
      fs::remove(tmp, ec);
    }
    throw;
  }
}

std::string manifest(const std::string& sub, const Context& ctx, const Outputs& outputs) {
  json files = json::array();
  for (const auto& [name, content] : outputs)
    files.push_back({{"file", name}, {"bytes", content.size()}, {"fnv1a", io::hex64(io::fnv1a(content.data(), content.size()))}});
  const std::string canon = ctx.cfg.canonical();
  return io::dump_json({{"schema_version", io::kSchemaVersion},
                        {"subcommand", sub},
                        {"library_version", CONDEX_VERSION},
                        {"config_hash", io::hex64(io::fnv1a(canon.data(), canon.size()))},
                        {"seed", ctx.seed},
                        {"outputs", files}});
}

int run(const std::string& sub, const std::string& config_path, const std::vector<std::string>& sets,
        const std::vector<double>& vq, const std::string& subset) {
  try {
    Context ctx{cli::Config::load(config_path)};
    for (const auto& s : sets) ctx.cfg.override_with(s);
    ctx.seed = ctx.cfg.seed();
    ctx.out_dir = ctx.cfg.path("output_dir");
    ctx.workers = static_cast<int>(ctx.cfg.integer("workers", 1));
    if (ctx.workers < 1) ctx.cfg.fail("workers", "workers must be positive");
    ctx.v_quantiles_override = vq;
    ctx.subset_override = subset;

    Outputs outputs;
    if (sub == "transform") outputs = cmd_transform(ctx);
    else if (sub == "explore") outputs = cmd_explore(ctx);
    else if (sub == "deform") outputs = cmd_deform(ctx);
    else if (sub == "fit") outputs = cmd_fit(ctx);
    else if (sub == "refit-z") outputs = cmd_refit(ctx);
    else if (sub == "simulate") outputs = cmd_simulate(ctx);
    else if (sub == "diagnose") outputs = cmd_diagnose(ctx);
    else if (sub == "bootstrap") outputs = cmd_bootstrap(ctx);
    outputs.emplace_back("manifest_" + sub + ".json", manifest(sub, ctx, outputs));
    publish(ctx.out_dir, outputs);
    for (const auto& [name, content] : outputs) std::cout << (ctx.out_dir / name).string() << "\n";
    return kExitOk;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional spatial extremes pipeline"};
  app.require_subcommand(1);
  std::string config;
  std::vector<std::string> sets;
  std::vector<double> vq;
  std::string subset;
  const std::vector<std::pair<std::string, std::string>> subs{
      {"transform", "rank-transform raw observations to Laplace margins"},
      {"explore", "empirical chi and pairwise conditional fits"},
      {"deform", "fit a thin-plate deformation of the coordinates"},
      {"fit", "composite-likelihood fit of the conditional model"},
      {"refit-z", "refit the residual field using empirical means"},
      {"simulate", "expected exceedance counts and unconditional probabilities"},
      {"diagnose", "Kendall independence check and model/data overlays"},
      {"bootstrap", "stationary-bootstrap refits"}};
  for (const auto& [name, help] : subs) {
    auto* sc = app.add_subcommand(name, help);
    sc->add_option("-c,--config", config, "configuration file (key=value or .json)")->required();
    sc->add_option("--set", sets, "override a configuration entry, key=value");
    if (name == "simulate") sc->add_option("--v-quantile", vq, "simulation quantile level (repeatable)");
    if (name == "transform") sc->add_option("--subset", subset, "replicate filter: rows:a-b,c or times:FILE");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  return run(app.get_subcommands().front()->get_name(), config, sets, vq, subset);
}
