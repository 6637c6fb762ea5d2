#include "cfdens/data.hpp"
#include "cfdens/error.hpp"

#include <gsl/gsl_integration.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace cfdens {

const char* to_string(ErrorKind kind) noexcept
{
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::domain: return "domain";
    case ErrorKind::solver: return "solver";
    case ErrorKind::internal: return "internal";
  }
  return "internal";
}

std::size_t ObservationTable::count(int level) const
{
  return static_cast<std::size_t>(
    std::count(treatment.begin(), treatment.end(), level));
}

std::vector<int> ObservationTable::levels() const
{
  std::set<int> s(treatment.begin(), treatment.end());
  return { s.begin(), s.end() };
}

ObservationTable ObservationTable::subset(std::span<const std::size_t> rows) const
{
  ObservationTable out;
  out.covariates.resize(static_cast<Eigen::Index>(rows.size()), d());
  out.outcome.resize(static_cast<Eigen::Index>(rows.size()));
  out.treatment.reserve(rows.size());
  out.observed.reserve(rows.size());
  out.rescale = rescale;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (r >= n())
      throw DataError("row index " + std::to_string(r) + " out of range");
    out.covariates.row(static_cast<Eigen::Index>(i)) =
      covariates.row(static_cast<Eigen::Index>(r));
    out.outcome(static_cast<Eigen::Index>(i)) = outcome(static_cast<Eigen::Index>(r));
    out.treatment.push_back(treatment[r]);
    out.observed.push_back(observed[r]);
  }
  return out;
}

void ObservationTable::validate() const
{
  const auto rows = static_cast<Eigen::Index>(n());
  if (n() == 0)
    throw DataError("empty data: no rows");
  if (covariates.rows() != rows || outcome.size() != rows || observed.size() != n())
    throw DataError("observation table columns have inconsistent lengths");
  if (covariates.cols() < 1)
    throw DataError("at least one covariate column is required");
  if (!covariates.allFinite())
    throw DataError("non-finite covariate value");
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double y = outcome(i);
    if (!std::isfinite(y))
      throw DataError("non-finite outcome at row " + std::to_string(i));
    if (observed[static_cast<std::size_t>(i)] && (y < 0.0 || y > 1.0))
      throw DataError("outcome outside [0,1] at row " + std::to_string(i));
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(cell);
  for (auto& s : cells) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = (b == std::string::npos) ? std::string{} : s.substr(b, e - b + 1);
  }
  return cells;
}

std::optional<double> parse_double(const std::string& s)
{
  if (s.empty())
    return std::nullopt;
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (*first == '+')
    ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || !std::isfinite(v))
    return std::nullopt;
  return v;
}

} // namespace

ObservationTable make_table(Eigen::MatrixXd covariates,
                            std::vector<int> treatment,
                            const Eigen::VectorXd& raw_outcome,
                            std::vector<bool> observed)
{
  const std::size_t n = treatment.size();
  if (n == 0)
    throw DataError("empty data: no rows");
  if (observed.empty())
    observed.assign(n, true);
  if (static_cast<std::size_t>(raw_outcome.size()) != n || observed.size() != n ||
      static_cast<std::size_t>(covariates.rows()) != n)
    throw DataError("observation table columns have inconsistent lengths");

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < n; ++i) {
    if (!observed[i])
      continue;
    const double y = raw_outcome(static_cast<Eigen::Index>(i));
    if (!std::isfinite(y))
      throw DataError("non-finite outcome at row " + std::to_string(i));
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  if (!(hi > lo))
    throw DataError("degenerate outcome range: observed outcomes are all equal "
                    "or absent");

  ObservationTable t;
  t.covariates = std::move(covariates);
  t.treatment = std::move(treatment);
  t.rescale = { lo, hi };
  t.outcome.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    t.outcome(k) = observed[i] ? t.rescale.rescale(raw_outcome(k)) : 0.0;
  }
  t.observed.assign(n, true);
  t = recode_missingness(t, observed);
  t.validate();
  return t;
}

ObservationTable make_unit_table(Eigen::MatrixXd covariates,
                                 std::vector<int> treatment,
                                 Eigen::VectorXd outcome)
{
  ObservationTable t;
  t.observed.assign(treatment.size(), true);
  t.covariates = std::move(covariates);
  t.treatment = std::move(treatment);
  t.outcome = std::move(outcome);
  t.rescale = { 0.0, 1.0 };
  t.validate();
  return t;
}

ObservationTable load_csv(const std::string& path,
                          const CsvSchema& schema,
                          const std::optional<std::string>& missing_code)
{
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open data file '" + path + "'");

  std::string line;
  if (!std::getline(in, line))
    throw DataError("empty data: file '" + path + "' has no header row");
  const auto header = split_csv_line(line);

  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw DataError("schema error: column '" + name + "' not found in '" +
                      path + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  if (schema.x_cols.empty())
    throw DataError("schema error: at least one covariate column is required");
  std::vector<std::size_t> x_idx;
  for (const auto& c : schema.x_cols)
    x_idx.push_back(column(c));
  const auto a_idx = column(schema.a_col);
  const auto y_idx = column(schema.y_col);

  std::vector<std::vector<double>> xs;
  std::vector<int> a;
  std::vector<double> y;
  std::vector<bool> observed;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < header.size())
      throw DataError("parse error: row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, header has " +
                      std::to_string(header.size()));
    std::vector<double> xr;
    for (std::size_t j = 0; j < x_idx.size(); ++j) {
      const auto v = parse_double(cells[x_idx[j]]);
      if (!v)
        throw DataError("parse error: non-numeric covariate '" + schema.x_cols[j] +
                        "' at row " + std::to_string(row));
      xr.push_back(*v);
    }
    const auto av = parse_double(cells[a_idx]);
    if (!av || std::floor(*av) != *av)
      throw DataError("parse error: treatment must be an integer label at row " +
                      std::to_string(row));

    const auto& ycell = cells[y_idx];
    bool obs = true;
    double yv = 0.0;
    if (missing_code && ycell == *missing_code) {
      obs = false;
    } else if (const auto parsed = parse_double(ycell)) {
      yv = *parsed;
      if (missing_code) {
        if (const auto code = parse_double(*missing_code); code && *code == yv)
          obs = false;
      }
    } else {
      throw DataError("parse error: non-numeric outcome at row " +
                      std::to_string(row));
    }
    xs.push_back(std::move(xr));
    a.push_back(static_cast<int>(*av));
    y.push_back(obs ? yv : 0.0);
    observed.push_back(obs);
    ++row;
  }
  if (a.empty())
    throw DataError("empty data: file '" + path + "' has no data rows");

  Eigen::MatrixXd cov(static_cast<Eigen::Index>(a.size()),
                      static_cast<Eigen::Index>(x_idx.size()));
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < x_idx.size(); ++j)
      cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = xs[i][j];
  Eigen::VectorXd yvec = Eigen::Map<Eigen::VectorXd>(y.data(),
                                                     static_cast<Eigen::Index>(y.size()));
  return make_table(std::move(cov), std::move(a), yvec, std::move(observed));
}

ObservationTable recode_missingness(const ObservationTable& table,
                                    const std::vector<bool>& observed_flag)
{
  if (observed_flag.size() != table.n())
    throw DataError("observed flag has length " + std::to_string(observed_flag.size()) +
                    ", expected " + std::to_string(table.n()));
  ObservationTable out = table;
  for (std::size_t i = 0; i < table.n(); ++i) {
    if (!observed_flag[i]) {
      out.treatment[i] = kNeitherArm;
      out.outcome(static_cast<Eigen::Index>(i)) = 0.0;
      out.observed[i] = false;
    }
  }
  return out;
}

double EvalGrid::interpolate(const Eigen::Ref<const Eigen::VectorXd>& values,
                             double y) const
{
  const auto g = points.size();
  if (y <= points(0))
    return values(0);
  if (y >= points(g - 1))
    return values(g - 1);
  const auto* begin = points.data();
  const auto* it = std::upper_bound(begin, begin + g, y);
  const auto hi = static_cast<Eigen::Index>(it - begin);
  const auto lo = hi - 1;
  const double t = (y - points(lo)) / (points(hi) - points(lo));
  return (1.0 - t) * values(lo) + t * values(hi);
}

Eigen::MatrixXd EvalGrid::interpolate_rows(const Eigen::Ref<const Eigen::MatrixXd>& values,
                                           const Eigen::Ref<const Eigen::VectorXd>& ys) const
{
  Eigen::MatrixXd out(ys.size(), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c)
    for (Eigen::Index i = 0; i < ys.size(); ++i)
      out(i, c) = interpolate(values.col(c), ys(i));
  return out;
}

namespace {

// P_n(t) and P_n'(t) by the three-term recurrence.
std::pair<double, double> legendre(Eigen::Index n, double t)
{
  double p0 = 1.0;
  double p1 = t;
  for (Eigen::Index k = 2; k <= n; ++k) {
    const double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / static_cast<double>(k);
    p0 = p1;
    p1 = p2;
  }
  return { p1, static_cast<double>(n) * (t * p1 - p0) / (t * t - 1.0) };
}

} // namespace

EvalGrid make_grid(Eigen::Index size, QuadratureRule rule)
{
  if (size < 8)
    throw ConfigError("grid too coarse: need at least 8 points, got " +
                      std::to_string(size));
  EvalGrid grid;
  grid.rule = rule;
  grid.points.resize(size);
  grid.weights.resize(size);
  if (rule == QuadratureRule::trapezoid) {
    const double h = 1.0 / static_cast<double>(size - 1);
    for (Eigen::Index j = 0; j < size; ++j) {
      grid.points(j) = static_cast<double>(j) * h;
      grid.weights(j) = h;
    }
    grid.points(size - 1) = 1.0;
    grid.weights(0) = grid.weights(size - 1) = 0.5 * h;
  } else {
    std::unique_ptr<gsl_integration_glfixed_table,
                    decltype(&gsl_integration_glfixed_table_free)>
      table(gsl_integration_glfixed_table_alloc(static_cast<size_t>(size)),
            &gsl_integration_glfixed_table_free);
    if (!table)
      throw Error(ErrorKind::internal, "failed to allocate Gauss-Legendre table");
    // GSL enumerates nodes symmetrically; sort them into increasing order.
    std::vector<std::pair<double, double>> nodes(static_cast<std::size_t>(size));
    for (Eigen::Index j = 0; j < size; ++j) {
      double x = 0.0, w = 0.0;
      gsl_integration_glfixed_point(0.0, 1.0, static_cast<size_t>(j), &x, &w,
                                    table.get());
      nodes[static_cast<std::size_t>(j)] = { x, w };
    }
    std::sort(nodes.begin(), nodes.end());
    // GSL's tabulated nodes for large sizes are accurate to about 1e-10;
    // two Newton steps on P_n bring nodes and weights to machine precision.
    for (Eigen::Index j = 0; j < size; ++j) {
      double t = 2.0 * nodes[static_cast<std::size_t>(j)].first - 1.0;
      double dp = 0.0;
      for (int it = 0; it < 3; ++it) {
        const auto [p, d] = legendre(size, t);
        dp = d;
        if (it < 2)
          t -= p / d;
      }
      grid.points(j) = 0.5 * (t + 1.0);
      grid.weights(j) = 1.0 / ((1.0 - t * t) * dp * dp);
    }
  }
  return grid;
}

QuadratureRule parse_rule(const std::string& name)
{
  if (name == "trapezoid")
    return QuadratureRule::trapezoid;
  if (name == "gauss_legendre" || name == "gauss-legendre")
    return QuadratureRule::gauss_legendre;
  throw ConfigError("unknown quadrature rule '" + name + "'");
}

std::string to_string(QuadratureRule rule)
{
  return rule == QuadratureRule::trapezoid ? "trapezoid" : "gauss_legendre";
}

std::vector<std::size_t> FoldPlan::rows_in(std::size_t fold) const
{
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (assignment[i] == fold)
      rows.push_back(i);
  return rows;
}

std::vector<std::size_t> FoldPlan::rows_not_in(std::size_t fold) const
{
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (assignment[i] != fold)
      rows.push_back(i);
  return rows;
}

FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed)
{
  if (k < 2)
    throw ConfigError("cross-fitting needs at least 2 folds, got " + std::to_string(k));
  if (n < k)
    throw DataError("infeasible fold plan: " + std::to_string(n) + " rows for " +
                    std::to_string(k) + " folds");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{ 0 });
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the plan does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  FoldPlan plan;
  plan.n = n;
  plan.k_folds = k;
  plan.seed = seed;
  plan.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    plan.assignment[perm[i]] = i % k;
  return plan;
}

} // namespace cfdens
