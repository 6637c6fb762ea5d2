#include "cfdens/effects.hpp"
#include "cfdens/error.hpp"

#include <cmath>

namespace cfdens {

namespace {

constexpr double kWaldZ = 1.959963984540054;

double fold_share(const NuisanceFit& fit, const FoldFit& fold)
{
  return static_cast<double>(fold.eval_rows.size()) / static_cast<double>(fit.n());
}

} // namespace

void finish_effect(EffectEstimate& est)
{
  const auto n = static_cast<double>(est.n);
  const double var = est.influence.rows() ? est.influence.covariance()(0, 0) : 0.0;
  est.se = std::sqrt(std::max(var, 0.0) / n);
  est.ci_wald = { est.psi_hat - kWaldZ * est.se, est.psi_hat + kWaldZ * est.se };
  const double s = std::max(est.se, 1.0 / std::sqrt(n));
  est.ci_conservative = { est.psi_hat - kWaldZ * s, est.psi_hat + kWaldZ * s };
  est.near_null = std::abs(est.psi_hat) < 2.0 / std::sqrt(n);
}

EffectEstimate effect_onestep(const DistanceSpec& distance,
                              const NuisanceFit& fit,
                              int level1,
                              int level0)
{
  const auto& grid = fit.grid;
  EffectEstimate est;
  est.distance = distance;
  est.levels = { level1, level0 };
  est.n = fit.n();
  est.density_floor = needs_floor(distance) ? kDensityFloor : 0.0;
  std::vector<InfluenceValues> blocks;
  for (const auto& fold : fit.folds) {
    const auto& a1 = fold.arm(level1);
    const auto& a0 = fold.arm(level0);
    Eigen::VectorXd p1 = a1.marginal;
    Eigen::VectorXd p0 = a0.marginal;
    if (needs_floor(distance)) {
      p1 = floor_density(p1);
      p0 = floor_density(p0);
    }
    const double plugin = divergence(distance, p1, p0, grid);
    const auto [l1, l0] = lambdas(distance, p1, p0);
    const auto phi1 = phi_a(fold.eval, level1, a1, grid, l1);
    const auto phi0 = phi_a(fold.eval, level0, a0, grid, l0);
    auto block = make_influence(phi1.raw + phi0.raw);
    const double w = fold_share(fit, fold);
    est.plugin += w * plugin;
    est.correction += w * block.correction(0);
    blocks.push_back(std::move(block));
  }
  est.psi_hat = est.plugin + est.correction;
  est.influence = pool_influence(blocks);
  finish_effect(est);
  return est;
}

EffectEstimate effect_l2_direct(const NuisanceFit& fit, int level1, int level0)
{
  const auto& grid = fit.grid;
  EffectEstimate est;
  est.distance = DistanceSpec{};
  est.levels = { level1, level0 };
  est.n = fit.n();
  std::vector<InfluenceValues> blocks;
  for (const auto& fold : fit.folds) {
    const auto& a1 = fold.arm(level1);
    const auto& a0 = fold.arm(level0);
    const Eigen::VectorXd diff = a1.marginal - a0.marginal;
    const Eigen::VectorXd d_obs = grid.interpolate_rows(diff, fold.eval.outcome);
    const Eigen::VectorXd c1 = a1.cond.expect(grid, diff);
    const Eigen::VectorXd c0 = a0.cond.expect(grid, diff);
    const auto rows = static_cast<Eigen::Index>(fold.eval.n());
    // 2 [(1(A=1)/pi1 - 1(A=0)/pi0)(d(Y) - c_A(X)) + c1(X) - c0(X)]
    Eigen::VectorXd term(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const int a = fold.eval.treatment[static_cast<std::size_t>(i)];
      double ipw = 0.0;
      if (a == level1)
        ipw = (d_obs(i) - c1(i)) / a1.propensity(i);
      else if (a == level0)
        ipw = -(d_obs(i) - c0(i)) / a0.propensity(i);
      term(i) = 2.0 * (ipw + c1(i) - c0(i));
    }
    const double sq = grid.integrate(diff.cwiseProduct(diff));
    const double w = fold_share(fit, fold);
    const double value = term.mean() - sq;
    est.psi_hat += w * value;
    est.plugin += w * sq;
    est.correction += w * (value - sq);
    // influence values in the same form as the generic route
    blocks.push_back(make_influence((term.array() - 2.0 * sq).matrix()));
  }
  est.influence = pool_influence(blocks);
  finish_effect(est);
  return est;
}

EffectEstimate effect_fixed_candidate(const DistanceSpec& distance,
                                      const NuisanceFit& fit,
                                      int level,
                                      const Eigen::Ref<const Eigen::VectorXd>& g)
{
  const auto& grid = fit.grid;
  if (g.size() != grid.size())
    throw DomainError("fixed candidate must be tabulated on the grid");
  if ((g.array() < 0.0).any())
    throw DomainError("fixed candidate must be nonnegative");
  EffectEstimate est;
  est.distance = distance;
  est.levels = { level, level };
  est.n = fit.n();
  est.density_floor = needs_floor(distance) ? kDensityFloor : 0.0;
  const Eigen::VectorXd gq = needs_floor(distance) ? floor_density(g) : Eigen::VectorXd(g);
  std::vector<InfluenceValues> blocks;
  for (const auto& fold : fit.folds) {
    const auto& arm = fold.arm(level);
    Eigen::VectorXd p = arm.marginal;
    if (needs_floor(distance))
      p = floor_density(p);
    const double plugin = divergence(distance, p, gq, grid);
    auto block = phi_a(fold.eval, level, arm, grid, lambda_fixed_g(distance, p, gq));
    const double w = fold_share(fit, fold);
    est.plugin += w * plugin;
    est.correction += w * block.correction(0);
    blocks.push_back(std::move(block));
  }
  est.psi_hat = est.plugin + est.correction;
  est.influence = pool_influence(blocks);
  finish_effect(est);
  return est;
}

} // namespace cfdens
