#pragma once

// Hand-rolled generators and fixtures shared by the unit tests.

#include "cfdens/data.hpp"
#include "cfdens/models.hpp"
#include "cfdens/nuisance.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <vector>

namespace cfdens::testing {

class Gen
{
public:
  explicit Gen(std::uint64_t seed)
    : rng_(seed)
  {}

  double uniform(double lo = 0.0, double hi = 1.0)
  {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  long integer(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform() < p; }

  Eigen::VectorXd vector(Eigen::Index n, double sd)
  {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i)
      v(i) = normal(sd);
    return v;
  }

  //! Strictly positive density on the grid: exp of a random cosine series.
  Eigen::VectorXd density(const EvalGrid& grid, Eigen::Index terms = 3, double sd = 0.5)
  {
    const Eigen::MatrixXd b = cosine_basis(grid.points, terms);
    const Eigen::VectorXd v = (b * vector(terms, sd)).array().exp().matrix();
    return v / grid.integrate(v);
  }

  //! Random table on [0,1] outcomes, `levels` treatment labels.
  ObservationTable table(std::size_t n, Eigen::Index d = 2, int levels = 2)
  {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), d);
    std::vector<int> a(n);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      for (Eigen::Index k = 0; k < d; ++k)
        x(r, k) = uniform(-1.0, 1.0);
      a[i] = static_cast<int>(integer(0, levels - 1));
      y(r) = std::clamp(0.5 + 0.1 * a[i] + 0.15 * x(r, 0) + normal(0.12), 0.0, 1.0);
    }
    return make_unit_table(std::move(x), std::move(a), std::move(y));
  }

private:
  std::mt19937_64 rng_;
};

//! One-fold fit with user-supplied nuisances on the rows themselves (no
//! cross-fitting). `eta` maps level to an n x G dense table.
inline NuisanceFit manual_fit(const ObservationTable& table,
                              const EvalGrid& grid,
                              const std::map<int, Eigen::VectorXd>& propensity,
                              const std::map<int, Eigen::MatrixXd>& eta)
{
  NuisanceFit fit;
  fit.grid = grid;
  fit.plan.n = table.n();
  fit.plan.k_folds = 1;
  fit.plan.assignment.assign(table.n(), 0);
  FoldFit fold;
  for (std::size_t i = 0; i < table.n(); ++i)
    fold.eval_rows.push_back(i);
  fold.eval = table;
  for (const auto& [level, pi] : propensity) {
    ArmFit arm;
    arm.level = level;
    arm.propensity = pi;
    arm.cond = CondDensityTable::dense(eta.at(level));
    arm.marginal = arm.cond.average();
    fold.arms[level] = arm;
    fit.levels.push_back(level);
  }
  fit.folds.push_back(std::move(fold));
  return fit;
}

//! n x G table repeating one curve.
inline Eigen::MatrixXd repeat_rows(const Eigen::VectorXd& curve, std::size_t n)
{
  return curve.transpose().replicate(static_cast<Eigen::Index>(n), 1);
}

inline Eigen::VectorXd cosine_density(const EvalGrid& grid, double c1)
{
  return (1.0 + c1 * std::numbers::sqrt2 * (std::numbers::pi * grid.points.array()).cos()).matrix();
}

} // namespace cfdens::testing

namespace cfdens::testing {

//! Central difference with one Richardson step, error O(h^4).
template <class F>
double derivative(F&& f, double x, double h)
{
  const auto central = [&](double s) { return (f(x + s) - f(x - s)) / (2.0 * s); };
  return (4.0 * central(h / 2.0) - central(h)) / 3.0;
}

} // namespace cfdens::testing
