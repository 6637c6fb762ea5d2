#include "cfdens/nuisance.hpp"
#include "cfdens/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

namespace cfdens {

// ---------------------------------------------------------------- tables

CondDensityTable CondDensityTable::dense(Eigen::MatrixXd values)
{
  CondDensityTable t;
  t.is_dense_ = true;
  t.atoms_ = std::move(values);
  return t;
}

CondDensityTable CondDensityTable::mixture(Eigen::MatrixXd weights, Eigen::MatrixXd atoms)
{
  if (weights.cols() != atoms.rows())
    throw DomainError("mixture table: weight columns must match atom rows");
  CondDensityTable t;
  t.is_dense_ = false;
  t.weights_ = std::move(weights);
  t.atoms_ = std::move(atoms);
  return t;
}

Eigen::VectorXd CondDensityTable::row(Eigen::Index i) const
{
  if (is_dense_)
    return atoms_.row(i).transpose();
  return (weights_.row(i) * atoms_).transpose();
}

Eigen::MatrixXd CondDensityTable::to_dense() const
{
  return is_dense_ ? atoms_ : Eigen::MatrixXd(weights_ * atoms_);
}

Eigen::MatrixXd CondDensityTable::expect(const EvalGrid& grid,
                                         const Eigen::Ref<const Eigen::MatrixXd>& h) const
{
  if (h.rows() != grid_size() || grid.size() != grid_size())
    throw DomainError("conditional expectation: function not tabulated on the grid");
  const Eigen::MatrixXd wh = grid.weights.asDiagonal() * h;
  if (is_dense_)
    return atoms_ * wh;
  return weights_ * (atoms_ * wh);
}

Eigen::VectorXd CondDensityTable::average() const
{
  if (is_dense_)
    return atoms_.colwise().mean().transpose();
  return (weights_.colwise().mean() * atoms_).transpose();
}

// ---------------------------------------------------------------- helpers

namespace {

double quantile7(std::vector<double> v, double prob)
{
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& v)
{
  if (v.size() < 2)
    return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

Eigen::VectorXd column_sds(const Eigen::MatrixXd& x)
{
  Eigen::VectorXd sd(x.cols());
  for (Eigen::Index k = 0; k < x.cols(); ++k)
    sd(k) = sample_sd(x.col(k));
  return sd;
}

// Divides each column by its scale; columns with zero scale are zeroed so
// that they carry no distance information.
Eigen::MatrixXd scale_columns(const Eigen::Ref<const Eigen::MatrixXd>& x,
                              const Eigen::VectorXd& scale)
{
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < x.cols(); ++k)
    out.col(k) = scale(k) > 0.0 ? Eigen::VectorXd(x.col(k) / scale(k))
                                : Eigen::VectorXd::Zero(x.rows());
  return out;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
  const Eigen::VectorXd an = a.rowwise().squaredNorm();
  const Eigen::VectorXd bn = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * a * b.transpose();
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

std::vector<std::size_t> rows_with_level(const ObservationTable& t, int level)
{
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < t.n(); ++i)
    if (t.treatment[i] == level)
      rows.push_back(i);
  return rows;
}

// m x G Gaussian kernels centered at y_i, bandwidth h.
Eigen::MatrixXd kernel_atoms(const Eigen::VectorXd& centers, double h, const EvalGrid& grid)
{
  Eigen::MatrixXd atoms(centers.size(), grid.size());
  const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi));
  for (Eigen::Index j = 0; j < grid.size(); ++j)
    for (Eigen::Index i = 0; i < centers.size(); ++i) {
      const double z = (centers(i) - grid.points(j)) / h;
      atoms(i, j) = norm * std::exp(-0.5 * z * z);
    }
  return atoms;
}

// Rescales weight rows so that each conditional density integrates to one.
void normalize_rows(Eigen::MatrixXd& weights, const Eigen::VectorXd& atom_mass)
{
  const Eigen::VectorXd mass = weights * atom_mass;
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    if (!(mass(i) > 0.0))
      throw DomainError("conditional density has no mass on the grid at row " +
                        std::to_string(i));
    weights.row(i) /= mass(i);
  }
}

std::vector<std::size_t> nearest(const Eigen::RowVectorXd& dist, std::size_t k)
{
  std::vector<std::size_t> idx(static_cast<std::size_t>(dist.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{ 0 });
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](auto a, auto b) {
                      const auto da = dist(static_cast<Eigen::Index>(a));
                      const auto db = dist(static_cast<Eigen::Index>(b));
                      return da < db || (da == db && a < b);
                    });
  idx.resize(k);
  return idx;
}

Eigen::VectorXd indicator(const ObservationTable& t, int level)
{
  Eigen::VectorXd y(static_cast<Eigen::Index>(t.n()));
  for (std::size_t i = 0; i < t.n(); ++i)
    y(static_cast<Eigen::Index>(i)) = t.treatment[i] == level ? 1.0 : 0.0;
  return y;
}

void require_both_classes(const Eigen::VectorXd& y, int level)
{
  const double s = y.sum();
  if (s <= 0.0 || s >= static_cast<double>(y.size()))
    throw DataError("propensity for level " + std::to_string(level) +
                    ": training rows need both A = a and A != a");
}

// ---------------------------------------------------------------- propensity

class LogisticFunction : public PropensityFunction
{
public:
  explicit LogisticFunction(Eigen::VectorXd coef)
    : coef_(std::move(coef))
  {}
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const override
  {
    const Eigen::VectorXd eta =
      (x * coef_.tail(coef_.size() - 1)).array() + coef_(0);
    return (1.0 / (1.0 + (-eta.array()).exp())).matrix();
  }

private:
  Eigen::VectorXd coef_;
};

class KnnPropensityFunction : public PropensityFunction
{
public:
  KnnPropensityFunction(Eigen::MatrixXd x, Eigen::VectorXd scale, Eigen::VectorXd target,
                        std::size_t k)
    : scale_(std::move(scale))
    , x_(scale_columns(x, scale_))
    , target_(std::move(target))
    , k_(k)
  {}
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const override
  {
    const Eigen::MatrixXd d = squared_distances(scale_columns(x, scale_), x_);
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto idx = nearest(d.row(i), k_);
      double s = 0.0;
      for (auto j : idx)
        s += target_(static_cast<Eigen::Index>(j));
      out(i) = s / static_cast<double>(idx.size());
    }
    return out;
  }

private:
  Eigen::VectorXd scale_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd target_;
  std::size_t k_;
};

class ConstantFunction : public PropensityFunction
{
public:
  explicit ConstantFunction(double v)
    : v_(v)
  {}
  Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const override
  {
    return Eigen::VectorXd::Constant(x.rows(), v_);
  }

private:
  double v_;
};

// ---------------------------------------------------------------- density

class KernelFunction : public CondDensityFunction
{
public:
  KernelFunction(Regressor reg, Eigen::MatrixXd x, Eigen::VectorXd x_scale,
                 Eigen::VectorXd y, double h, std::size_t k, const EvalGrid& grid)
    : reg_(reg)
    , x_scale_(std::move(x_scale))
    , x_(scale_columns(x, x_scale_))
    , k_(k)
    , atoms_(kernel_atoms(y, h, grid))
    , atom_mass_(atoms_ * grid.weights)
    , grid_points_(grid.points)
  {}

  CondDensityTable tabulate(const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const EvalGrid& grid) const override
  {
    if (grid.size() != grid_points_.size() || grid.points != grid_points_)
      throw DomainError("conditional density was fitted on a different grid");
    const Eigen::MatrixXd d = squared_distances(scale_columns(x, x_scale_), x_);
    Eigen::MatrixXd w(x.rows(), x_.rows());
    if (reg_ == Regressor::nadaraya_watson) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double dmin = d.row(i).minCoeff();
        w.row(i) = (-0.5 * (d.row(i).array() - dmin)).exp();
      }
    } else {
      w.setZero();
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (auto j : nearest(d.row(i), k_))
          w(i, static_cast<Eigen::Index>(j)) = 1.0;
    }
    normalize_rows(w, atom_mass_);
    return CondDensityTable::mixture(std::move(w), atoms_);
  }

private:
  Regressor reg_;
  Eigen::VectorXd x_scale_;
  Eigen::MatrixXd x_;
  std::size_t k_;
  Eigen::MatrixXd atoms_;
  Eigen::VectorXd atom_mass_;
  Eigen::VectorXd grid_points_;
};

class FixedCurveFunction : public CondDensityFunction
{
public:
  FixedCurveFunction(Eigen::VectorXd curve, Eigen::VectorXd points)
    : curve_(std::move(curve))
    , points_(std::move(points))
  {}
  CondDensityTable tabulate(const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const EvalGrid& grid) const override
  {
    if (grid.points != points_)
      throw DomainError("conditional density was fitted on a different grid");
    return CondDensityTable::mixture(Eigen::MatrixXd::Ones(x.rows(), 1),
                                     curve_.transpose());
  }

private:
  Eigen::VectorXd curve_;
  Eigen::VectorXd points_;
};

double resolve_bandwidth(const Bandwidth& bw, const Eigen::VectorXd& y)
{
  if (!bw.silverman)
    return bw.fixed;
  double h = silverman_bandwidth(y);
  if (!(h > 0.0))
    h = 1e-3; // all outcomes tied
  return h;
}

std::size_t default_k(std::size_t m)
{
  return std::max<std::size_t>(1, static_cast<std::size_t>(
                                    std::ceil(std::sqrt(static_cast<double>(m)))));
}

} // namespace

std::unique_ptr<PropensityFunction> LogisticPropensity::fit(const ObservationTable& train,
                                                            int level) const
{
  const Eigen::VectorXd y = indicator(train, level);
  require_both_classes(y, level);
  const auto n = static_cast<Eigen::Index>(train.n());
  Eigen::MatrixXd z(n, train.d() + 1);
  z.col(0).setOnes();
  z.rightCols(train.d()) = train.covariates;

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(z.cols());
  const double base = y.mean();
  coef(0) = std::log(base / (1.0 - base));
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd eta = z * coef;
    const Eigen::ArrayXd p = 1.0 / (1.0 + (-eta.array()).exp());
    const Eigen::VectorXd grad = z.transpose() * (y - p.matrix());
    if (grad.norm() < 1e-8) {
      converged = true;
      break;
    }
    const Eigen::VectorXd w = (p * (1.0 - p)).max(1e-12).matrix();
    Eigen::MatrixXd hess = z.transpose() * w.asDiagonal() * z;
    hess.diagonal().array() += 1e-10;
    coef += hess.ldlt().solve(grad);
    if (!coef.allFinite())
      break;
  }
  auto out = std::make_unique<LogisticFunction>(coef.allFinite() ? coef : Eigen::VectorXd::Zero(z.cols()));
  // fitted probabilities numerically 0 or 1; the gradient can vanish under
  // separation, so convergence alone does not rule it out
  out->separation_warning =
    !converged || !coef.allFinite() || (z * coef).cwiseAbs().maxCoeff() > 15.0;
  return out;
}

std::unique_ptr<PropensityFunction> KnnPropensity::fit(const ObservationTable& train,
                                                       int level) const
{
  const Eigen::VectorXd y = indicator(train, level);
  require_both_classes(y, level);
  const std::size_t k = k_ > 0 ? k_ : default_k(train.n());
  return std::make_unique<KnnPropensityFunction>(train.covariates, column_sds(train.covariates),
                                                 y, k);
}

std::unique_ptr<PropensityFunction> ConstantPropensity::fit(const ObservationTable&, int) const
{
  if (!(value_ > 0.0 && value_ < 1.0))
    throw ConfigError("constant propensity must lie in (0, 1)");
  return std::make_unique<ConstantFunction>(value_);
}

Bandwidth Bandwidth::parse(const std::string& text)
{
  if (text == "silverman")
    return {};
  double h = 0.0;
  try {
    std::size_t pos = 0;
    h = std::stod(text, &pos);
    if (pos != text.size())
      throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ConfigError("bandwidth must be 'silverman' or a positive number, got '" + text + "'");
  }
  if (!(h > 0.0) || !std::isfinite(h))
    throw ConfigError("bandwidth must be positive");
  return { false, h };
}

std::string Bandwidth::to_string() const
{
  return silverman ? "silverman" : std::to_string(fixed);
}

double silverman_bandwidth(const Eigen::Ref<const Eigen::VectorXd>& y)
{
  if (y.size() < 2)
    throw DataError("bandwidth needs at least two outcomes");
  std::vector<double> v(y.data(), y.data() + y.size());
  const double iqr = quantile7(v, 0.75) - quantile7(v, 0.25);
  const double sd = sample_sd(y);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0))
    spread = sd;
  return 0.9 * spread * std::pow(static_cast<double>(y.size()), -0.2);
}

Regressor parse_regressor(const std::string& text)
{
  if (text == "nw" || text == "nadaraya_watson" || text == "kernel")
    return Regressor::nadaraya_watson;
  if (text == "knn")
    return Regressor::knn;
  throw ConfigError("unknown density regressor '" + text + "' (expected nw, knn or marginal)");
}

std::string to_string(Regressor r)
{
  return r == Regressor::knn ? "knn" : "nw";
}

std::string KernelCondDensity::name() const
{
  return to_string(regressor_);
}

std::unique_ptr<CondDensityFunction> KernelCondDensity::fit(const ObservationTable& train,
                                                            int level,
                                                            const EvalGrid& grid) const
{
  const auto rows = rows_with_level(train, level);
  if (rows.size() < 20)
    throw DataError("insufficient data for level " + std::to_string(level) + ": " +
                    std::to_string(rows.size()) + " training rows, need 20");
  const auto sub = train.subset(rows);
  const double h = resolve_bandwidth(bandwidth_, sub.outcome);
  const auto m = static_cast<double>(sub.n());
  Eigen::VectorXd scale = column_sds(sub.covariates);
  if (regressor_ == Regressor::nadaraya_watson)
    scale *= std::pow(m, -1.0 / (static_cast<double>(sub.d()) + 4.0)); // Scott
  const std::size_t k = knn_k_ > 0 ? knn_k_ : default_k(sub.n());
  return std::make_unique<KernelFunction>(regressor_, sub.covariates, scale, sub.outcome, h,
                                          k, grid);
}

std::unique_ptr<CondDensityFunction> MarginalCondDensity::fit(const ObservationTable& train,
                                                              int level,
                                                              const EvalGrid& grid) const
{
  const auto rows = rows_with_level(train, level);
  if (rows.size() < 20)
    throw DataError("insufficient data for level " + std::to_string(level) + ": " +
                    std::to_string(rows.size()) + " training rows, need 20");
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    y(static_cast<Eigen::Index>(i)) = train.outcome(static_cast<Eigen::Index>(rows[i]));
  const double h = resolve_bandwidth(bandwidth_, y);
  Eigen::VectorXd curve = kernel_atoms(y, h, grid).colwise().mean().transpose();
  curve /= grid.integrate(curve);
  return std::make_unique<FixedCurveFunction>(std::move(curve), grid.points);
}

NuisanceLearners default_learners()
{
  return { std::make_shared<LogisticPropensity>(), std::make_shared<KernelCondDensity>(),
           kDefaultClipEps };
}

Eigen::VectorXd clip_propensity(Eigen::VectorXd values, double eps, std::size_t levels)
{
  const double hi = 1.0 - eps * static_cast<double>(std::max<std::size_t>(levels, 2) - 1);
  if (!(eps > 0.0) || !(hi > eps))
    throw ConfigError("clip_eps must lie in (0, 1/L)");
  return values.cwiseMax(eps).cwiseMin(hi);
}

const ArmFit& FoldFit::arm(int level) const
{
  const auto it = arms.find(level);
  if (it == arms.end())
    throw DataError("no nuisance fit for level " + std::to_string(level));
  return it->second;
}

bool NuisanceFit::any_separation_warning() const
{
  for (const auto& f : folds)
    for (const auto& [a, arm] : f.arms)
      if (arm.separation_warning)
        return true;
  return false;
}

namespace {

void check_disjoint(std::span<const std::size_t> train, std::span<const std::size_t> eval)
{
  std::unordered_set<std::size_t> seen(train.begin(), train.end());
  for (auto r : eval)
    if (seen.count(r))
      throw DataError("cross-fit violation: row " + std::to_string(r) +
                      " is used for both training and evaluation");
}

} // namespace

ArmFit fit_arm(const ObservationTable& table,
               std::span<const std::size_t> train_rows,
               std::span<const std::size_t> eval_rows,
               int level,
               const NuisanceLearners& learners,
               const EvalGrid& grid)
{
  check_disjoint(train_rows, eval_rows);
  const auto train = table.subset(train_rows);
  const auto eval = table.subset(eval_rows);
  ArmFit arm;
  arm.level = level;
  const auto pf = learners.propensity->fit(train, level);
  arm.separation_warning = pf->separation_warning;
  arm.propensity =
    clip_propensity(pf->predict(eval.covariates), learners.clip_eps, train.levels().size());
  const auto df = learners.density->fit(train, level, grid);
  arm.cond = df->tabulate(eval.covariates, grid);
  arm.marginal = arm.cond.average();
  return arm;
}

NuisanceFit cross_fit(const ObservationTable& table,
                      const FoldPlan& plan,
                      const std::vector<int>& levels,
                      const NuisanceLearners& learners,
                      const EvalGrid& grid)
{
  if (plan.n != table.n())
    throw DataError("fold plan covers " + std::to_string(plan.n) + " rows, table has " +
                    std::to_string(table.n()));
  if (!learners.propensity || !learners.density)
    throw ConfigError("nuisance learners are not set");
  for (int a : levels)
    if (table.count(a) == 0)
      throw DataError("level " + std::to_string(a) + " does not occur in the data");
  NuisanceFit fit;
  fit.grid = grid;
  fit.plan = plan;
  fit.levels = levels;
  for (std::size_t f = 0; f < plan.k_folds; ++f) {
    FoldFit fold;
    fold.train_rows = plan.rows_not_in(f);
    fold.eval_rows = plan.rows_in(f);
    fold.eval = table.subset(fold.eval_rows);
    for (int a : levels)
      fold.arms.emplace(a, fit_arm(table, fold.train_rows, fold.eval_rows, a, learners, grid));
    fit.folds.push_back(std::move(fold));
  }
  return fit;
}

Eigen::VectorXd plugin_marginal(const CondDensityFunction& fit,
                                const ObservationTable& table,
                                std::span<const std::size_t> train_rows,
                                std::span<const std::size_t> eval_rows,
                                const EvalGrid& grid)
{
  check_disjoint(train_rows, eval_rows);
  if (eval_rows.empty())
    throw DataError("plug-in marginal needs at least one evaluation row");
  return fit.tabulate(table.subset(eval_rows).covariates, grid).average();
}

} // namespace cfdens
