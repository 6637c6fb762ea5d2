#include "cfdens/error.hpp"
#include "cfdens/oracle.hpp"
#include "cfdens/projection.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace cfdens;
using cfdens::testing::cosine_density;
using cfdens::testing::Gen;
using cfdens::testing::manual_fit;
using cfdens::testing::repeat_rows;

namespace {

// Six rows, uniform eta, known propensities.
struct Fixture
{
  ObservationTable table;
  Eigen::VectorXd pi;
  EvalGrid grid = make_grid(4097);
};

Fixture six_rows()
{
  Fixture f;
  Eigen::MatrixXd x(6, 1);
  x << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  Eigen::VectorXd y(6);
  y << 0.1, 0.25, 0.4, 0.6, 0.8, 0.9;
  f.table = make_unit_table(x, { 1, 0, 1, 1, 0, 1 }, y);
  f.pi.resize(6);
  f.pi << 0.5, 0.4, 0.8, 0.25, 0.5, 0.6;
  return f;
}

NuisanceFit uniform_fit(const Fixture& f)
{
  return manual_fit(f.table, f.grid, { { 1, f.pi } },
                    { { 1, Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(f.table.n()),
                                                 f.grid.size()) } });
}

} // namespace

TEST_CASE("moment examples")
{
  const auto grid = make_grid(1025);
  const Eigen::VectorXd p = cosine_density(grid, 0.3);
  const auto l2 = DistanceSpec::parse("l2");
  Eigen::VectorXd beta(1);
  beta << 0.0;
  // int sqrt2 cos(pi y) 2 (1 - p) dy = -2 c1
  CHECK(moment(l2, ModelSpec::series(1), beta, p, grid)(0) == doctest::Approx(-0.6).epsilon(1e-6));
  beta << 0.3;
  CHECK(std::abs(moment(l2, ModelSpec::series(1), beta, p, grid)(0)) < 1e-6);

  // KL and an exponential family: the moment is E_g b - E_p b
  const Eigen::VectorXd b = cosine_basis(grid.points, 1).col(0);
  beta << 0.0;
  CHECK(moment(DistanceSpec::parse("kl"), ModelSpec::expfam(1), beta, p, grid)(0) ==
        doctest::Approx(-grid.integrate(b.cwiseProduct(p))).epsilon(1e-6));
}

TEST_CASE("property: moment is the gradient of the objective")
{
  Gen gen(1);
  const auto grid = make_grid(257);
  for (const auto& name : { "l2", "kl", "chisq", "hellinger", "tv:t=50" }) {
    const auto dist = DistanceSpec::parse(name);
    for (const auto& model : { ModelSpec::series(2), ModelSpec::expfam(2), ModelSpec::gmm(1) }) {
      const Eigen::VectorXd p = gen.density(grid);
      Eigen::VectorXd beta = gen.vector(model.beta_dim(), 0.2);
      if (model.kind == ModelKind::gmm)
        beta << 0.5, 0.0;
      const Eigen::VectorXd m = moment(dist, model, beta, p, grid);
      for (Eigen::Index k = 0; k < beta.size(); ++k) {
        const double num = cfdens::testing::derivative(
          [&](double s) {
            Eigen::VectorXd b = beta;
            b(k) += s;
            return projection_objective(dist, model, b, p, grid);
          },
          0.0, 1e-3);
        CHECK(std::abs(num - m(k)) < 1e-6 * std::max(1.0, std::abs(m(k))));
      }
    }
  }
}

TEST_CASE("six-row fixture: IPW closed form by hand")
{
  const auto f = six_rows();
  const auto fit = uniform_fit(f);
  const auto est = solve_onestep(DistanceSpec::parse("l2"), ModelSpec::series(2), fit, 1);
  CHECK(est.solver.method == "closed_form");
  // eta uniform: p_hat = 1, hc = 0, so beta_k = mean_i 1(A=1)/pi b_k(Y_i)
  for (Eigen::Index k = 0; k < 2; ++k) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < 6; ++i)
      if (f.table.treatment[static_cast<std::size_t>(i)] == 1)
        s += std::numbers::sqrt2 * std::cos(std::numbers::pi * double(k + 1) * f.table.outcome(i)) /
             f.pi(i);
    CHECK(est.beta_hat(k) == doctest::Approx(s / 6.0).epsilon(1e-5));
  }
  CHECK(est.solver.residual < 1e-10);
  CHECK(onestep_equation(DistanceSpec::parse("l2"), ModelSpec::series(2), est.beta_hat, fit, 1)
          .norm() < 1e-10);

  // sandwich for L2 and the series: V = 2I and the influence is -2 phi(b)
  Eigen::MatrixXd phi(6, 2);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index k = 0; k < 2; ++k)
      phi(i, k) = f.table.treatment[static_cast<std::size_t>(i)] == 1
                    ? std::numbers::sqrt2 *
                        std::cos(std::numbers::pi * double(k + 1) * f.table.outcome(i)) / f.pi(i)
                    : 0.0;
  const Eigen::MatrixXd c = phi.rowwise() - phi.colwise().mean();
  const Eigen::MatrixXd expect = c.transpose() * c / 36.0;
  CHECK((est.covariance - expect).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((est.jacobian - 2.0 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("duplicating every row shrinks Wald intervals by sqrt 2")
{
  const auto f = six_rows();
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < 12; ++i)
    rows.push_back(i % 6);
  Fixture g = f;
  g.table = f.table.subset(rows);
  g.pi = Eigen::VectorXd(12);
  g.pi << f.pi, f.pi;
  const auto a = solve_onestep(DistanceSpec::parse("l2"), ModelSpec::series(2), uniform_fit(f), 1);
  const auto b = solve_onestep(DistanceSpec::parse("l2"), ModelSpec::series(2), uniform_fit(g), 1);
  CHECK((a.beta_hat - b.beta_hat).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t k = 0; k < 2; ++k) {
    const double wa = a.wald_ci[k].second - a.wald_ci[k].first;
    const double wb = b.wald_ci[k].second - b.wald_ci[k].first;
    CHECK(wa / wb == doctest::Approx(std::numbers::sqrt2).epsilon(1e-9));
    CHECK(a.wald_ci[k].first < a.beta_hat(static_cast<Eigen::Index>(k)));
  }
}

TEST_CASE("closed forms agree with the generic root-finder")
{
  Gen gen(2);
  const auto grid = make_grid(256);
  const auto t = gen.table(400);
  const auto fit = cross_fit(t, make_folds(t.n(), 2, 5), { 1 }, default_learners(), grid);
  SolverOptions generic;
  generic.force_generic = true;
  for (const auto& [dist, model, method] :
       { std::tuple{ "l2", ModelSpec::series(4), "closed_form" },
         std::tuple{ "kl", ModelSpec::expfam(3), "expfam_newton" } }) {
    const auto d = DistanceSpec::parse(dist);
    const auto fast = solve_onestep(d, model, fit, 1);
    const auto slow = solve_onestep(d, model, fit, 1, generic);
    CHECK(fast.solver.method == method);
    CHECK(slow.solver.method == "damped_newton");
    CHECK((fast.beta_hat - slow.beta_hat).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((fast.covariance - slow.covariance).cwiseAbs().maxCoeff() <
          1e-6 * fast.covariance.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("residual certificate for the generic solver")
{
  const auto grid = make_grid(256);
  const auto t = draw(dgp_by_name("D2"), 500, 3);
  const auto fit = cross_fit(t, make_folds(t.n(), 2, 7), { 0 }, default_learners(), grid);
  for (const auto& [dist, model] : { std::pair{ "hellinger", ModelSpec::expfam(2) },
                                     std::pair{ "chisq", ModelSpec::expfam(2) },
                                     std::pair{ "kl", ModelSpec::gmm(1) },
                                     std::pair{ "kl", ModelSpec::gmm(2) },
                                     std::pair{ "l2", ModelSpec::gmm(1) },
                                     std::pair{ "tv:t=50", ModelSpec::expfam(2) } }) {
    const auto d = DistanceSpec::parse(dist);
    const auto est = solve_onestep(d, model, fit, 0);
    CHECK(est.solver.residual < 1e-8);
    CHECK(est.solver.residual <= est.solver.residual_at_start);
    CHECK(onestep_equation(d, model, est.beta_hat, fit, 0).norm() < 1e-7);
    CHECK(est.fitted_density.minCoeff() >= 0.0);
    CHECK(std::abs(grid.integrate(est.fitted_density) - 1.0) < 1e-9);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(est.covariance);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
  }
}

TEST_CASE("population root agrees with direct minimization")
{
  const auto grid = make_grid(513);
  const auto dgp = dgp_by_name("D2");
  const Eigen::VectorXd p = true_marginal(dgp, 1, grid, 24);
  for (const auto& [dist, model] : { std::pair{ "l2", ModelSpec::series(3) },
                                     std::pair{ "kl", ModelSpec::expfam(2) },
                                     std::pair{ "hellinger", ModelSpec::series(2) },
                                     std::pair{ "chisq", ModelSpec::expfam(2) },
                                     std::pair{ "tv:t=50", ModelSpec::series(3) },
                                     std::pair{ "tv:t=50", ModelSpec::expfam(3) } }) {
    const auto d = DistanceSpec::parse(dist);
    const auto root = solve_moment(d, model, p, grid);
    REQUIRE(root.converged);
    const auto nm = oracle_projection(p, model, d, grid, true);
    CHECK((root.x - nm.beta_star).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(moment(d, model, root.x, p, grid).norm() < 1e-8);
  }
}

TEST_CASE("a base density needs no correction")
{
  const auto grid = make_grid(256);
  Gen gen(4);
  const auto t = gen.table(60);
  const auto fit = manual_fit(t, grid, { { 1, Eigen::VectorXd::Constant(60, 0.5) } },
                              { { 1, Eigen::MatrixXd::Ones(60, 256) } });
  // with everyone untreated at level 1 the IPW term is zero and p_hat = 1
  auto none = t;
  std::fill(none.treatment.begin(), none.treatment.end(), 0);
  auto fit0 = fit;
  fit0.folds[0].eval = none;
  const auto est = solve_onestep(DistanceSpec::parse("kl"), ModelSpec::expfam(3), fit0, 1);
  CHECK(est.beta_hat.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("a projection on the boundary of the model is reported, not returned")
{
  // the Hellinger projection onto a two-term series wants g to touch zero
  // here, where the moment diverges and no root exists
  const auto grid = make_grid(256);
  const auto t = draw(dgp_by_name("D2"), 500, 3);
  const auto fit = cross_fit(t, make_folds(t.n(), 2, 7), { 0 }, default_learners(), grid);
  CHECK_THROWS_WITH_AS(
    solve_onestep(DistanceSpec::parse("hellinger"), ModelSpec::series(2), fit, 0),
    doctest::Contains("did not converge"), SolverError);
}
