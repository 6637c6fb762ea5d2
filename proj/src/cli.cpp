#include "cfdens/cli.hpp"
#include "cfdens/effects.hpp"
#include "cfdens/error.hpp"
#include "cfdens/oracle.hpp"
#include "cfdens/projection.hpp"
#include "cfdens/selection.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace cfdens::cli {

using nlohmann::json;

namespace {

const std::vector<std::string> kCommands = { "fit-projection", "density-effect", "select-model",
                                             "aggregate", "simulate" };

json to_json(const Eigen::VectorXd& v)
{
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

json to_json(const Eigen::MatrixXd& m)
{
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Eigen::VectorXd r = m.row(i).transpose();
    rows.push_back(to_json(r));
  }
  return rows;
}

json interval(const std::pair<double, double>& ci)
{
  return json::array({ ci.first, ci.second });
}

std::string utc_now()
{
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

template <class F>
void check(std::vector<std::string>& out, const std::string& field, F&& parse)
{
  try {
    parse();
  } catch (const std::exception& e) {
    out.push_back(field + ": " + e.what());
  }
}

bool needs_data(const RunConfig& c)
{
  return c.command != "simulate";
}

NuisanceLearners make_learners(const RunConfig& c)
{
  NuisanceLearners l;
  l.clip_eps = c.clip_eps;
  if (c.propensity == "logistic")
    l.propensity = std::make_shared<LogisticPropensity>();
  else
    l.propensity = std::make_shared<KnnPropensity>();
  const auto bw = Bandwidth::parse(c.bandwidth);
  if (c.density == "marginal")
    l.density = std::make_shared<MarginalCondDensity>(bw);
  else
    l.density = std::make_shared<KernelCondDensity>(parse_regressor(c.density), bw);
  return l;
}

std::vector<ModelSpec> selection_models(const RunConfig& c)
{
  std::vector<ModelSpec> out;
  const std::string key = c.family == "gmm" ? ":k=" : ":d=";
  for (long k : parse_range(c.dims))
    out.push_back(ModelSpec::parse(c.family + key + std::to_string(k)));
  return out;
}

void write_text(const std::string& path, const std::string& text)
{
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw ConfigError("cannot open '" + path + "' for writing");
  f << text;
  if (!f)
    throw ConfigError("failed writing '" + path + "'");
}

std::string density_csv(const EvalGrid& grid, const Eigen::VectorXd& g, const RescaleParams& r)
{
  std::ostringstream os;
  os.precision(17);
  const double range = r.y_max - r.y_min;
  os << "y,y_unit,density,density_unit\n";
  for (Eigen::Index j = 0; j < grid.size(); ++j)
    os << r.unrescale(grid.points(j)) << ',' << grid.points(j) << ',' << g(j) / range << ','
       << g(j) << '\n';
  return os.str();
}

json density_json(const EvalGrid& grid, const Eigen::VectorXd& g, const RescaleParams& r)
{
  json rows = json::array();
  const double range = r.y_max - r.y_min;
  for (Eigen::Index j = 0; j < grid.size(); ++j)
    rows.push_back({ { "y", r.unrescale(grid.points(j)) },
                     { "y_unit", grid.points(j) },
                     { "density", g(j) / range },
                     { "density_unit", g(j) } });
  return rows;
}

// Value of psi in the original outcome units: L2sq picks up 1 / range, the
// f-divergences are scale free, and the smoothed TV depends on the scale
// through nu_t so it is reported on [0, 1] only.
json effect_original_units(const DistanceSpec& d, double psi, const RescaleParams& r)
{
  switch (d.kind) {
    case DistanceKind::l2sq:
      return psi / (r.y_max - r.y_min);
    case DistanceKind::smoothed_tv:
      return nullptr;
    default:
      return psi;
  }
}

json fit_projection(const RunConfig& c, const ObservationTable& table, const EvalGrid& grid,
                    json& report)
{
  const auto distance = DistanceSpec::parse(c.distance);
  const auto model = ModelSpec::parse(c.model);
  const auto fit =
    cross_fit(table, make_folds(table.n(), c.folds, c.seed), { c.level }, make_learners(c), grid);
  if (fit.any_separation_warning())
    report["warnings"].push_back("propensity fit shows (quasi-)separation; predictions clipped");
  const auto est = solve_onestep(distance, model, fit, c.level);
  json ci = json::array();
  for (const auto& w : est.wald_ci)
    ci.push_back(interval(w));
  report["beta"] = to_json(est.beta_hat);
  report["cov"] = to_json(est.covariance);
  report["ci"] = ci;
  report["residual"] = est.solver.residual;
  report["solver"] = { { "method", est.solver.method },
                       { "iterations", est.solver.iterations },
                       { "residual", est.solver.residual },
                       { "residual_at_start", est.solver.residual_at_start } };
  report["density_grid"] = density_json(grid, est.fitted_density, table.rescale);
  if (!c.csv.empty())
    write_text(c.csv, density_csv(grid, est.fitted_density, table.rescale));
  return report;
}

json density_effect(const RunConfig& c, const ObservationTable& table, const EvalGrid& grid,
                    json& report)
{
  const auto distance = DistanceSpec::parse(c.distance);
  const auto fit = cross_fit(table, make_folds(table.n(), c.folds, c.seed), { c.level1, c.level0 },
                             make_learners(c), grid);
  if (fit.any_separation_warning())
    report["warnings"].push_back("propensity fit shows (quasi-)separation; predictions clipped");
  const auto est = effect_onestep(distance, fit, c.level1, c.level0);
  report["psi"] = est.psi_hat;
  report["psi_original_units"] = effect_original_units(distance, est.psi_hat, table.rescale);
  report["se"] = est.se;
  report["ci_wald"] = interval(est.ci_wald);
  report["ci_conservative"] = interval(est.ci_conservative);
  report["near_null_flag"] = est.near_null;
  report["plugin"] = est.plugin;
  report["correction"] = est.correction;
  report["density_floor"] = est.density_floor;
  if (est.near_null)
    report["warnings"].push_back("estimate is near the null; the Wald interval may undercover, "
                                 "use ci_conservative");
  return report;
}

json select(const RunConfig& c, const ObservationTable& table, const EvalGrid& grid, json& report)
{
  SelectionOptions opts;
  opts.distance = DistanceSpec::parse(c.distance);
  opts.inner_seed = splitmix64(c.seed);
  const auto models = selection_models(c);
  const auto res = select_model(table, make_folds(table.n(), c.folds, c.seed), c.level, models,
                                make_learners(c), grid, opts);
  const auto key = parse_range(c.dims);
  std::ostringstream csv;
  csv.precision(17);
  csv << "k,risk,se,feasible\n";
  json rows = json::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const bool ok = res.candidates[i].feasible;
    csv << key[i] << ',';
    if (ok)
      csv << res.risk[i] << ',' << res.se[i];
    else
      csv << ',';
    csv << ',' << (ok ? 1 : 0) << '\n';
    rows.push_back({ { "k", key[i] },
                     { "model", res.candidates[i].label },
                     { "risk", ok ? json(res.risk[i]) : json(nullptr) },
                     { "se", ok ? json(res.se[i]) : json(nullptr) },
                     { "feasible", ok } });
  }
  report["risk_table"] = rows;
  report["chosen_k"] = key[res.chosen];
  report["chosen_model"] = res.candidates[res.chosen].label;
  for (const auto& w : res.warnings)
    report["warnings"].push_back(w);
  if (!c.csv.empty())
    write_text(c.csv, csv.str());
  return report;
}

json aggregate(const RunConfig& c, const ObservationTable& table, const EvalGrid& grid,
               json& report)
{
  std::vector<ModelSpec> models;
  for (const auto& s : c.candidates)
    models.push_back(ModelSpec::parse(s));
  AggregationOptions opts;
  opts.folds = c.folds;
  opts.seed = c.seed;
  const auto res = aggregate_pipeline(table, c.level, models, make_learners(c), grid, opts);
  json weights = json::object();
  for (std::size_t m = 0; m < models.size(); ++m)
    weights[models[m].to_string()] = res.weights(static_cast<Eigen::Index>(m));
  json dropped = json::array();
  for (auto d : res.dropped)
    dropped.push_back(models[d].to_string());
  report["weights"] = weights;
  report["dropped"] = dropped;
  report["roles"] = res.roles;
  report["density_grid"] = density_json(grid, res.density, table.rescale);
  if (!c.csv.empty())
    write_text(c.csv, density_csv(grid, res.density, table.rescale));
  return report;
}

json simulate(const RunConfig& c, json& report)
{
  ExperimentOptions opts;
  opts.reps = c.reps;
  opts.seed = c.seed;
  opts.ns = c.ns;
  opts.grid_size = c.grid_size;
  opts.folds = c.folds;
  const auto ex = make_experiment(c.experiment, opts);
  const auto table = mc_run(ex);
  json summary = json::array();
  for (const auto& s : table.summary)
    summary.push_back({ { "n", s.n },
                        { "component", table.labels[s.component] },
                        { "truth", table.truth(static_cast<Eigen::Index>(s.component)) },
                        { "ok", s.ok },
                        { "failed", s.failed },
                        { "bias", s.bias },
                        { "rmse", s.rmse },
                        { "median_abs_error", s.median_abs_error },
                        { "coverage", s.coverage },
                        { "mean_se", s.mean_se } });
  std::size_t failed = 0;
  for (const auto& r : table.rows)
    failed += r.failed ? 1 : 0;
  report["experiment"] = ex.name;
  report["dgp"] = { { "name", ex.dgp.name }, { "description", ex.dgp.description } };
  report["ns"] = ex.ns;
  report["truth"] = to_json(table.truth);
  report["summary"] = summary;
  if (failed > 0)
    report["warnings"].push_back(std::to_string(failed) + " replicate(s) failed and were excluded");
  if (!c.csv.empty())
    write_text(c.csv, table.to_csv());
  return report;
}

int exit_code(ErrorKind k)
{
  switch (k) {
    case ErrorKind::config:
      return ExitCode::config;
    case ErrorKind::data:
      return ExitCode::data;
    case ErrorKind::domain:
    case ErrorKind::solver:
      return ExitCode::solver;
    default:
      return ExitCode::internal;
  }
}

int report_error(const RunConfig* c, const std::string& kind, const std::vector<std::string>& msgs,
                 int code, std::ostream& err)
{
  json e = { { "error", { { "kind", kind }, { "messages", msgs }, { "exit_code", code } } },
             { "version", kVersion } };
  if (c)
    e["config"] = to_json(*c);
  err << e.dump(2) << '\n';
  if (c && !c->output.empty()) {
    try {
      write_text(c->output, e.dump(2) + "\n");
    } catch (const std::exception&) {
    }
  }
  return code;
}

} // namespace

std::vector<long> parse_range(const std::string& text)
{
  std::vector<long> out;
  const auto dots = text.find("..");
  try {
    if (dots != std::string::npos) {
      std::size_t used = 0;
      const long lo = std::stol(text.substr(0, dots), &used);
      if (used != dots)
        throw ConfigError("");
      const std::string rest = text.substr(dots + 2);
      const long hi = std::stol(rest, &used);
      if (used != rest.size() || hi < lo)
        throw ConfigError("");
      for (long k = lo; k <= hi; ++k)
        out.push_back(k);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        out.push_back(std::stol(item, &used));
        if (used != item.size())
          throw ConfigError("");
      }
    }
  } catch (const std::exception&) {
    throw ConfigError("expected 'lo..hi' or a comma list of integers, got '" + text + "'");
  }
  if (out.empty())
    throw ConfigError("empty range '" + text + "'");
  return out;
}

json to_json(const RunConfig& c)
{
  json j = { { "command", c.command },
             { "data", c.data },
             { "x_cols", c.x_cols },
             { "a_col", c.a_col },
             { "y_col", c.y_col },
             { "missing_code", c.missing_code ? json(*c.missing_code) : json(nullptr) },
             { "folds", c.folds },
             { "seed", c.seed },
             { "grid_size", c.grid_size },
             { "quadrature", c.quadrature },
             { "clip_eps", c.clip_eps },
             { "bandwidth", c.bandwidth },
             { "propensity", c.propensity },
             { "density", c.density },
             { "quick", c.quick },
             { "output", c.output },
             { "csv", c.csv } };
  if (c.command == "fit-projection") {
    j["model"] = c.model;
    j["distance"] = c.distance;
    j["level"] = c.level;
  } else if (c.command == "density-effect") {
    j["distance"] = c.distance;
    j["level1"] = c.level1;
    j["level0"] = c.level0;
  } else if (c.command == "select-model") {
    j["dims"] = c.dims;
    j["family"] = c.family;
    j["distance"] = c.distance;
    j["level"] = c.level;
  } else if (c.command == "aggregate") {
    j["candidates"] = c.candidates;
    j["level"] = c.level;
  } else if (c.command == "simulate") {
    j["experiment"] = c.experiment;
    j["reps"] = c.reps;
    j["ns"] = c.ns;
    for (const char* k : { "data", "x_cols", "a_col", "y_col", "missing_code", "quadrature",
                           "clip_eps", "bandwidth", "propensity", "density" })
      j.erase(k);
  }
  return j;
}

RunConfig resolve(RunConfig c)
{
  if (c.quick) {
    c.grid_size = std::min<std::size_t>(c.grid_size, 128);
    c.folds = std::min<std::size_t>(c.folds, 2);
  }
  return c;
}

std::vector<std::string> validate(const RunConfig& c)
{
  std::vector<std::string> v;
  if (std::find(kCommands.begin(), kCommands.end(), c.command) == kCommands.end())
    v.push_back("command: unknown command '" + c.command + "'");
  if (needs_data(c)) {
    if (c.data.empty())
      v.push_back("data: a CSV path is required");
    if (c.x_cols.empty())
      v.push_back("x-cols: at least one covariate column is required");
    if (c.a_col.empty())
      v.push_back("a-col: must not be empty");
    if (c.y_col.empty())
      v.push_back("y-col: must not be empty");
  }
  if (c.folds < 2)
    v.push_back("folds: need at least 2, got " + std::to_string(c.folds));
  if (c.grid_size < 16)
    v.push_back("grid: need at least 16 points, got " + std::to_string(c.grid_size));
  if (!(c.clip_eps > 0.0 && c.clip_eps < 0.5))
    v.push_back("clip-eps: must lie in (0, 0.5)");
  check(v, "quadrature", [&] { parse_rule(c.quadrature); });
  check(v, "bandwidth", [&] { Bandwidth::parse(c.bandwidth); });
  if (c.propensity != "logistic" && c.propensity != "knn")
    v.push_back("nuisance-propensity: expected 'logistic' or 'knn', got '" + c.propensity + "'");
  if (c.density != "marginal")
    check(v, "nuisance-density", [&] { parse_regressor(c.density); });

  if (c.command == "fit-projection") {
    check(v, "model", [&] { ModelSpec::parse(c.model); });
    check(v, "distance", [&] { DistanceSpec::parse(c.distance); });
  } else if (c.command == "density-effect") {
    check(v, "distance", [&] { DistanceSpec::parse(c.distance); });
    if (c.level1 == c.level0)
      v.push_back("level1/level0: the two levels must differ");
  } else if (c.command == "select-model") {
    check(v, "distance", [&] { DistanceSpec::parse(c.distance); });
    if (c.family != "series" && c.family != "expfam" && c.family != "gmm")
      v.push_back("family: expected series, expfam or gmm, got '" + c.family + "'");
    else
      check(v, "dims", [&] { selection_models(c); });
  } else if (c.command == "aggregate") {
    if (c.candidates.empty())
      v.push_back("candidates: at least one model string is required");
    for (const auto& s : c.candidates)
      check(v, "candidates", [&] { ModelSpec::parse(s); });
  } else if (c.command == "simulate") {
    const auto names = experiment_names();
    if (std::find(names.begin(), names.end(), c.experiment) == names.end())
      v.push_back("experiment: unknown experiment '" + c.experiment + "'");
    if (c.reps < 2)
      v.push_back("reps: need at least 2");
    for (auto n : c.ns)
      if (n < 50)
        v.push_back("n: sample sizes below 50 are not supported, got " + std::to_string(n));
  }
  return v;
}

int run(const RunConfig& raw, std::ostream& out, std::ostream& err)
{
  const RunConfig c = resolve(raw);
  if (const auto v = validate(c); !v.empty())
    return report_error(&c, "config", v, ExitCode::config, err);
  try {
    json report = { { "command", c.command },
                    { "version", kVersion },
                    { "seed", c.seed },
                    { "config", to_json(c) },
                    { "warnings", json::array() } };
    if (c.timestamp)
      report["timestamp"] = utc_now();
    if (c.command == "simulate") {
      simulate(c, report);
    } else {
      auto table = load_csv(c.data, { c.x_cols, c.a_col, c.y_col }, c.missing_code);
      const auto grid = make_grid(static_cast<Eigen::Index>(c.grid_size), parse_rule(c.quadrature));
      report["n"] = table.n();
      report["rescale"] = { { "y_min", table.rescale.y_min }, { "y_max", table.rescale.y_max } };
      if (c.command == "fit-projection")
        fit_projection(c, table, grid, report);
      else if (c.command == "density-effect")
        density_effect(c, table, grid, report);
      else if (c.command == "select-model")
        select(c, table, grid, report);
      else
        aggregate(c, table, grid, report);
    }
    const std::string text = report.dump(2) + "\n";
    if (c.output.empty())
      out << text;
    else
      write_text(c.output, text);
    return ExitCode::ok;
  } catch (const Error& e) {
    return report_error(&c, to_string(e.kind()), { e.what() }, exit_code(e.kind()), err);
  } catch (const std::exception& e) {
    return report_error(&c, "internal", { e.what() }, ExitCode::internal, err);
  }
}

int main(int argc, char** argv, std::ostream& out, std::ostream& err)
{
  CLI::App app{ "Counterfactual density projections and density effects." };
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  RunConfig c;
  std::string missing;

  const auto common = [&](CLI::App* s, bool with_data) {
    if (with_data) {
      s->add_option("--data", c.data, "CSV with a header row");
      s->add_option("--x-cols", c.x_cols, "covariate columns")->delimiter(',');
      s->add_option("--a-col", c.a_col, "treatment column")->capture_default_str();
      s->add_option("--y-col", c.y_col, "outcome column")->capture_default_str();
      s->add_option("--missing-code", missing, "outcome cell marking a missing value");
      s->add_option("--nuisance-propensity", c.propensity, "logistic | knn")->capture_default_str();
      s->add_option("--nuisance-density", c.density, "nw | knn | marginal")->capture_default_str();
      s->add_option("--bandwidth", c.bandwidth, "silverman or a number")->capture_default_str();
      s->add_option("--clip-eps", c.clip_eps, "propensity clipping")->capture_default_str();
      s->add_option("--quadrature", c.quadrature, "trapezoid | gauss_legendre")
        ->capture_default_str();
    }
    s->add_option("--folds", c.folds, "cross-fitting folds")->capture_default_str();
    s->add_option("--seed", c.seed, "random seed")->capture_default_str();
    s->add_option("--grid", c.grid_size, "evaluation grid size")->capture_default_str();
    s->add_option("--output,-o", c.output, "JSON report path (stdout if omitted)");
    s->add_option("--csv", c.csv, "CSV path for the grid or table");
    s->add_flag("--quick", c.quick, "cap grid at 128 and folds at 2");
    s->add_flag("!--no-timestamp", c.timestamp, "omit the timestamp field");
  };

  auto* fp = app.add_subcommand("fit-projection", "project p_a onto a model family");
  common(fp, true);
  fp->add_option("--model", c.model, "series:d=4 | expfam:d=4 | gmm:k=2")->capture_default_str();
  fp->add_option("--distance", c.distance, "l2 | kl | chisq | hellinger | tv:t=50")
    ->capture_default_str();
  fp->add_option("--level", c.level, "treatment level a")->capture_default_str();

  auto* de = app.add_subcommand("density-effect", "distance between two counterfactual densities");
  common(de, true);
  de->add_option("--distance", c.distance)->capture_default_str();
  de->add_option("--level1", c.level1)->capture_default_str();
  de->add_option("--level0", c.level0)->capture_default_str();

  auto* sm = app.add_subcommand("select-model", "cross-validated choice of model dimension");
  common(sm, true);
  sm->add_option("--dims", c.dims, "lo..hi or a comma list")->capture_default_str();
  sm->add_option("--family", c.family, "series | expfam | gmm")->capture_default_str();
  sm->add_option("--distance", c.distance)->capture_default_str();
  sm->add_option("--level", c.level)->capture_default_str();

  auto* ag = app.add_subcommand("aggregate", "L2 aggregation of candidate fits");
  common(ag, true);
  ag->add_option("--candidates", c.candidates, "model strings")->delimiter(' ');
  ag->add_option("--level", c.level)->capture_default_str();

  auto* si = app.add_subcommand("simulate", "Monte-Carlo experiment on a synthetic DGP");
  common(si, false);
  si->add_option("--experiment", c.experiment, "experiment name");
  si->add_option("--reps", c.reps)->capture_default_str();
  si->add_option("--n", c.ns, "sample sizes")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0)
      return app.exit(e, out, err);
    return report_error(nullptr, "config", { e.what() }, ExitCode::config, err);
  }
  c.command = app.get_subcommands().front()->get_name();
  if (!missing.empty())
    c.missing_code = missing;
  return run(c, out, err);
}

} // namespace cfdens::cli
