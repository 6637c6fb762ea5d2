#include "cfdens/error.hpp"
#include "cfdens/oracle.hpp"
#include "cfdens/selection.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace cfdens;
using cfdens::testing::Gen;
using cfdens::testing::manual_fit;

namespace {

NuisanceFit oracle_fit(const std::string& dgp_name, std::size_t n, std::uint64_t seed,
                       const EvalGrid& grid)
{
  const auto dgp = dgp_by_name(dgp_name);
  const auto t = draw(dgp, n, seed);
  return cross_fit(t, make_folds(n, 2, seed), { 1, 0 }, oracle_learners(dgp), grid);
}

Candidate cand(const ModelSpec& m, bool feasible = true)
{
  return { m.to_string(), m, feasible, {} };
}

} // namespace

TEST_CASE("the uniform density has pseudo-risk exactly -1")
{
  Gen gen(1);
  const auto grid = make_grid(100);
  const auto t = gen.table(25);
  Eigen::MatrixXd eta(25, 100);
  for (Eigen::Index i = 0; i < 25; ++i)
    eta.row(i) = gen.density(grid).transpose();
  const auto fit = manual_fit(t, grid, { { 1, Eigen::VectorXd::Constant(25, 0.3) } },
                              { { 1, eta } });
  const auto r = pseudo_l2_risk(fit, 1, Eigen::VectorXd::Ones(100));
  CHECK(r.risk == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.se < 1e-12);
  CHECK_THROWS_AS(pseudo_l2_risk(fit, 1, Eigen::VectorXd::Ones(99)), DomainError);
}

TEST_CASE("property: risk differences are linear in the candidates")
{
  Gen gen(2);
  const auto grid = make_grid(128);
  const auto fit = oracle_fit("D2", 400, 3, grid);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd g1 = gen.density(grid);
    const Eigen::VectorXd g2 = gen.density(grid);
    const auto r1 = pseudo_l2_risk(fit, 1, g1);
    const auto r2 = pseudo_l2_risk(fit, 1, g2);
    // R(g1) - R(g2) = int g1^2 - int g2^2 - 2 P_n [phi-corrected mean of g1 - g2]
    const Eigen::VectorXd diff = g1 - g2;
    const auto rd = pseudo_l2_risk(fit, 1, diff);
    const double lhs = r1.risk - r2.risk;
    const double rhs = grid.integrate(g1.cwiseProduct(g1)) - grid.integrate(g2.cwiseProduct(g2)) +
                       (rd.risk - grid.integrate(diff.cwiseProduct(diff)));
    CHECK(std::abs(lhs - rhs) < 1e-10);
    // ranking is unchanged by the per-row constant shift between candidates
    CHECK(((r1.per_row - r2.per_row).mean() - lhs) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("property: pseudo-risk tracks the L2 distance to p_a")
{
  const auto grid = make_grid(256);
  const auto dgp = dgp_by_name("D2");
  const Eigen::VectorXd p = true_marginal(dgp, 1, grid);
  const double p2 = grid.integrate(p.cwiseProduct(p));
  const auto fit = oracle_fit("D2", 20000, 5, grid);
  Gen gen(3);
  const auto base = pseudo_l2_risk(fit, 1, p);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd g = gen.density(grid, 4, 0.4);
    const auto r = pseudo_l2_risk(fit, 1, g);
    const double truth = grid.integrate((g - p).array().square().matrix()) - p2;
    CHECK(std::abs(r.risk - truth) < 4.0 * r.se);
    // moving away from p_a costs ||delta||^2, up to the noise in the difference
    const Eigen::VectorXd delta = g - p;
    const Eigen::VectorXd row_diff = r.per_row - base.per_row;
    const double sd = std::sqrt((row_diff.array() - row_diff.mean()).square().mean() / 20000.0);
    CHECK(r.risk - base.risk > grid.integrate(delta.cwiseProduct(delta)) - 4.0 * sd);
    CHECK(r.risk > base.risk);
  }
}

TEST_CASE("choose_candidate: ties, infeasible entries and a single candidate")
{
  const std::vector<Candidate> c{ cand(ModelSpec::series(3)), cand(ModelSpec::series(1)),
                                  cand(ModelSpec::series(2)) };
  CHECK(choose_candidate(c, { -1.0, -1.0, -1.0 }) == 1);
  CHECK(choose_candidate(c, { -1.0, -0.5, -1.2 }) == 2);
  CHECK(choose_candidate(c, { -1.0, std::nan(""), -0.9 }) == 0);
  auto off = c;
  off[2].feasible = false;
  CHECK(choose_candidate(off, { -1.0, -0.5, -9.0 }) == 0);
  const std::vector<Candidate> same{ cand(ModelSpec::series(2)), cand(ModelSpec::expfam(2)) };
  CHECK(choose_candidate(same, { -1.0, -1.0 }) == 0);
  CHECK(choose_candidate({ cand(ModelSpec::gmm(2)) }, { 4.0 }) == 0);
  CHECK_THROWS_AS(choose_candidate({ cand(ModelSpec::series(1), false) }, { -1.0 }), SolverError);
}

TEST_CASE("select_model on D5 prefers a small series")
{
  const auto dgp = dgp_by_name("D5");
  const auto t = draw(dgp, 1500, 21);
  const auto grid = make_grid(128);
  std::vector<ModelSpec> models;
  for (Eigen::Index d = 1; d <= 6; ++d)
    models.push_back(ModelSpec::series(d));
  const auto plan = make_folds(t.n(), 2, 4);
  const auto a = select_model(t, plan, 1, models, default_learners(), grid);
  REQUIRE(a.risk.size() == 6);
  REQUIRE(a.se.size() == 6);
  CHECK(a.chosen < 3);
  for (double r : a.risk)
    CHECK(std::isfinite(r));
  const auto b = select_model(t, plan, 1, models, default_learners(), grid);
  CHECK(a.risk == b.risk);
  CHECK_THROWS_AS(select_model(t, plan, 1, {}, default_learners(), grid), ConfigError);
}

TEST_CASE("linear aggregation")
{
  const auto grid = make_grid(256);
  const auto dgp = dgp_by_name("D2");
  const Eigen::VectorXd p = true_marginal(dgp, 1, grid);
  const auto fit = oracle_fit("D2", 20000, 8, grid);

  SUBCASE("a single candidate equal to p_a gets weight one")
  {
    const auto agg = aggregate_linear(fit, 1, p);
    CHECK(agg.weights.size() == 1);
    CHECK(std::abs(agg.weights(0) - 1.0) < 0.05);
  }
  SUBCASE("duplicates are dropped and the result is a density")
  {
    Gen gen(9);
    Eigen::MatrixXd c(grid.size(), 4);
    c.col(0) = gen.density(grid);
    c.col(1) = gen.density(grid);
    c.col(2) = 2.0 * c.col(0);
    c.col(3) = c.col(0) - 0.5 * c.col(1);
    const auto agg = aggregate_linear(fit, 1, c);
    CHECK(agg.dropped == std::vector<std::size_t>{ 2, 3 });
    CHECK(agg.weights(2) == 0.0);
    CHECK(agg.weights(3) == 0.0);
    CHECK((c * agg.weights - agg.raw).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(agg.density.minCoeff() >= 0.0);
    CHECK(std::abs(grid.integrate(agg.density) - 1.0) < 1e-10);
  }
  SUBCASE("the pipeline runs both roles")
  {
    const auto t = draw(dgp, 800, 2);
    const auto agg = aggregate_pipeline(t, 1, { ModelSpec::series(2), ModelSpec::series(4) },
                                        default_learners(), grid);
    CHECK(agg.roles.size() == 2);
    CHECK(agg.weights.size() == 2);
    CHECK(std::abs(grid.integrate(agg.density) - 1.0) < 1e-10);
  }
}
