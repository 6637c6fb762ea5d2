#include "cfdens/effects.hpp"
#include "cfdens/error.hpp"
#include "cfdens/oracle.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace cfdens;
using cfdens::testing::cosine_density;
using cfdens::testing::Gen;
using cfdens::testing::manual_fit;
using cfdens::testing::repeat_rows;

namespace {

const std::vector<std::string> kAllDistances{ "l2", "kl", "chisq", "hellinger", "tv:t=50" };

NuisanceFit random_fit(Gen& gen, std::size_t n, const EvalGrid& grid)
{
  auto t = gen.table(n);
  const auto rows = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd e1(rows, grid.size());
  Eigen::MatrixXd e0(rows, grid.size());
  Eigen::VectorXd p1(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    e1.row(i) = gen.density(grid).transpose();
    e0.row(i) = gen.density(grid).transpose();
    p1(i) = gen.uniform(0.1, 0.9);
  }
  return manual_fit(t, grid, { { 1, p1 }, { 0, (1.0 - p1.array()).matrix() } },
                    { { 1, e1 }, { 0, e0 } });
}

} // namespace

TEST_CASE("identical arms give a zero effect for every distance")
{
  Gen gen(1);
  const auto grid = make_grid(128);
  auto fit = random_fit(gen, 50, grid);
  auto& fold = fit.folds[0];
  fold.arms[0].cond = fold.arms[1].cond;
  fold.arms[0].marginal = fold.arms[1].marginal;
  for (const auto& name : kAllDistances) {
    const auto est = effect_onestep(DistanceSpec::parse(name), fit);
    CHECK(std::abs(est.psi_hat) < 1e-12);
    CHECK(std::abs(est.plugin) < 1e-12);
  }
}

TEST_CASE("the direct L2 form equals the generic one-step")
{
  Gen gen(2);
  const auto grid = make_grid(200);
  for (int fixture = 0; fixture < 3; ++fixture) {
    const auto fit = random_fit(gen, 40 + 30 * fixture, grid);
    const auto a = effect_onestep(DistanceSpec::parse("l2"), fit);
    const auto b = effect_l2_direct(fit);
    CHECK(std::abs(a.psi_hat - b.psi_hat) < 1e-10);
    CHECK(std::abs(a.plugin - b.plugin) < 1e-10);
    CHECK(std::abs(a.se - b.se) < 1e-10);
  }
  // and on a cross-fit with estimated nuisances
  const auto t = draw(dgp_by_name("D5"), 400, 9);
  const auto cf = cross_fit(t, make_folds(400, 3, 2), { 1, 0 }, default_learners(), grid);
  CHECK(std::abs(effect_onestep(DistanceSpec::parse("l2"), cf).psi_hat -
                 effect_l2_direct(cf).psi_hat) < 1e-10);
}

TEST_CASE("four-row fixture by hand")
{
  const auto grid = make_grid(4097);
  Eigen::MatrixXd x(4, 1);
  x << 0.0, 0.0, 0.0, 0.0;
  Eigen::VectorXd y(4);
  y << 0.2, 0.7, 0.5, 0.9;
  const auto t = make_unit_table(x, { 1, 0, 1, 0 }, y);
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(4, 0.5);
  const auto fit = manual_fit(t, grid, { { 1, half }, { 0, half } },
                              { { 1, repeat_rows(cosine_density(grid, 0.3), 4) },
                                { 0, Eigen::MatrixXd::Ones(4, grid.size()) } });
  // p1 - p0 = d(y) = 0.3 sqrt2 cos(pi y); int d^2 = 0.09
  // phi_1(2d): hc = 2 int d p1 = 0.18, phi_0(-2d): hc = -2 int d = 0
  const auto d = [](double v) { return 0.3 * std::numbers::sqrt2 * std::cos(std::numbers::pi * v); };
  double raw = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i)
    raw += t.treatment[static_cast<std::size_t>(i)] == 1 ? (2.0 * d(y(i)) - 0.18) / 0.5
                                                         : (-2.0 * d(y(i))) / 0.5;
  const auto est = effect_onestep(DistanceSpec::parse("l2"), fit);
  CHECK(est.plugin == doctest::Approx(0.09).epsilon(1e-6));
  CHECK(est.psi_hat == doctest::Approx(0.09 + raw / 4.0).epsilon(1e-5));
  CHECK(est.correction == doctest::Approx(raw / 4.0).epsilon(1e-5));
}

TEST_CASE("intervals and the near-null flag")
{
  Gen gen(3);
  const auto grid = make_grid(128);
  for (int trial = 0; trial < 10; ++trial) {
    const auto fit = random_fit(gen, 30 + 10 * static_cast<std::size_t>(trial), grid);
    for (const auto& name : kAllDistances) {
      const auto est = effect_onestep(DistanceSpec::parse(name), fit);
      CHECK(est.ci_conservative.first <= est.ci_wald.first);
      CHECK(est.ci_conservative.second >= est.ci_wald.second);
      CHECK(est.ci_wald.first <= est.psi_hat);
      CHECK(est.near_null == (std::abs(est.psi_hat) < 2.0 / std::sqrt(double(est.n))));
      CHECK(std::abs(est.influence.centered.mean()) < 1e-10);
    }
  }
  EffectEstimate manual;
  manual.n = 100;
  manual.psi_hat = 0.05;
  manual.influence = make_influence(Eigen::MatrixXd::Zero(100, 1));
  finish_effect(manual);
  CHECK(manual.se == 0.0);
  CHECK(manual.near_null);
  CHECK(manual.ci_conservative.second - manual.ci_conservative.first ==
        doctest::Approx(2.0 * 1.959963984540054 * 0.1));
}

TEST_CASE("floors are reported for ratio distances")
{
  Gen gen(4);
  const auto grid = make_grid(64);
  auto fit = random_fit(gen, 30, grid);
  auto& arm0 = fit.folds[0].arms[0];
  arm0.marginal.head(10).setZero();
  const auto kl = effect_onestep(DistanceSpec::parse("kl"), fit);
  CHECK(kl.density_floor == kDensityFloor);
  CHECK(std::isfinite(kl.psi_hat));
  CHECK(effect_onestep(DistanceSpec::parse("l2"), fit).density_floor == 0.0);
  CHECK_THROWS_AS(effect_fixed_candidate(DistanceSpec::parse("kl"), fit, 1,
                                         -Eigen::VectorXd::Ones(64)),
                  DomainError);
}

TEST_CASE("property: population values recovered with true nuisances")
{
  const auto dgp = dgp_by_name("D5");
  const auto grid = make_grid(256);
  const Eigen::VectorXd p1 = true_marginal(dgp, 1, grid);
  const Eigen::VectorXd p0 = true_marginal(dgp, 0, grid);
  const Eigen::VectorXd g = Eigen::VectorXd::Ones(grid.size());
  const auto t = draw(dgp, 20000, 11);
  const auto fit = cross_fit(t, make_folds(t.n(), 2, 1), { 1, 0 }, oracle_learners(dgp), grid);
  for (const auto& name : kAllDistances) {
    const auto dist = DistanceSpec::parse(name);
    const double truth = divergence(dist, p1, p0, grid);
    const auto est = effect_onestep(dist, fit);
    CHECK(std::abs(est.psi_hat - truth) < 4.0 * est.se);
    const double fixed_truth = divergence(dist, p1, g, grid);
    const auto fixed = effect_fixed_candidate(dist, fit, 1, g);
    CHECK(std::abs(fixed.psi_hat - fixed_truth) < 4.0 * fixed.se);
  }
}
