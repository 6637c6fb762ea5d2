#include "cfdens/error.hpp"
#include "cfdens/models.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace cfdens;
using cfdens::testing::derivative;
using cfdens::testing::Gen;

namespace {

Eigen::VectorXd random_beta(Gen& gen, const ModelSpec& m, double radius)
{
  Eigen::VectorXd b = gen.vector(m.beta_dim(), 1.0);
  return b * (gen.uniform(0.0, radius) / b.norm());
}

} // namespace

TEST_CASE("cosine basis is orthonormal and mean zero on the default grid")
{
  const auto grid = make_grid(512);
  const Eigen::MatrixXd b = cosine_basis(grid.points, 8);
  const Eigen::MatrixXd gram = b.transpose() * grid.weights.asDiagonal() * b;
  CHECK((gram - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((b.transpose() * grid.weights).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(cosine_basis(0.25, 2)(1) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("base densities at beta = 0")
{
  for (double y : { 0.0, 0.3, 0.77, 1.0 }) {
    CHECK(g_eval(ModelSpec::series(4), Eigen::VectorXd::Zero(4), y) == 1.0);
    CHECK(g_eval(ModelSpec::expfam(3), Eigen::VectorXd::Zero(3), y) ==
          doctest::Approx(1.0).epsilon(1e-13));
  }
  MixtureParams one{ Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, 0.5),
                     Eigen::VectorXd::Constant(1, 0.1) };
  const Eigen::VectorXd beta = mixture_beta(one);
  CHECK(beta.size() == 2);
  CHECK(g_eval(ModelSpec::gmm(1), beta, 0.5) ==
        doctest::Approx(1.0 / std::sqrt(2.0 * std::numbers::pi * 0.01)).epsilon(1e-12));
}

TEST_CASE("mixture parameter round trip, sorted by mean")
{
  MixtureParams p{ Eigen::Vector3d(0.2, 0.5, 0.3), Eigen::Vector3d(0.1, 0.45, 0.9),
                   Eigen::Vector3d(0.05, 0.2, 0.01) };
  const auto back = mixture_params(mixture_beta(p));
  CHECK((back.weights - p.weights).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.means - p.means).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.sigmas - p.sigmas).cwiseAbs().maxCoeff() < 1e-12);

  Gen gen(2);
  for (int i = 0; i < 50; ++i) {
    const auto q = mixture_params(gen.vector(8, 2.0));
    CHECK(q.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK((q.weights.array() > 0).all());
    CHECK((q.sigmas.array() >= kSigmaMin).all());
    for (Eigen::Index j = 1; j < 3; ++j)
      CHECK(q.means(j) >= q.means(j - 1));
  }
}

TEST_CASE("log partition")
{
  const auto& grid = normalization_grid();
  CHECK(log_partition(ModelSpec::expfam(3), Eigen::VectorXd::Zero(3), grid).value ==
        doctest::Approx(0.0));

  const auto m1 = ModelSpec::expfam(1);
  const auto lp = log_partition(m1, Eigen::VectorXd::Constant(1, 0.3), grid);
  const double fd = derivative(
    [&](double s) { return log_partition(m1, Eigen::VectorXd::Constant(1, s), grid).value; }, 0.3,
    1e-3);
  CHECK(std::abs(lp.gradient(0) - fd) < 1e-6);

  // b_j(1 - y) = (-1)^j b_j(y): flipping odd coefficients leaves C unchanged
  Gen gen(9);
  const auto m4 = ModelSpec::expfam(4);
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd b = gen.vector(4, 1.0);
    Eigen::VectorXd flipped = b;
    flipped(0) = -flipped(0);
    flipped(2) = -flipped(2);
    CHECK(log_partition(m4, b, grid).value ==
          doctest::Approx(log_partition(m4, flipped, grid).value).epsilon(1e-12));
  }
  CHECK_THROWS_AS(log_partition(ModelSpec::series(2), Eigen::VectorXd::Zero(2), grid), DomainError);
  CHECK_THROWS_AS(log_partition(ModelSpec::expfam(2), Eigen::VectorXd::Constant(2, 1e308), grid),
                  DomainError);
  CHECK(std::isfinite(log_partition(m1, Eigen::VectorXd::Constant(1, 1e4), grid).value));
}

TEST_CASE("property: dC/dbeta is E_g b and the Hessian is Cov_g b")
{
  const auto grid = make_grid(512);
  Gen gen(10);
  for (int i = 0; i < 20; ++i) {
    const auto m = ModelSpec::expfam(gen.integer(1, 5));
    const Eigen::VectorXd beta = random_beta(gen, m, 2.0);
    const auto lp = log_partition(m, beta, normalization_grid());
    const Eigen::VectorXd g = ModelState(m, beta).values(grid.points);
    const Eigen::MatrixXd b = cosine_basis(grid.points, m.size);
    const Eigen::VectorXd eb = b.transpose() * grid.weights.cwiseProduct(g);
    CHECK((lp.gradient - eb).cwiseAbs().maxCoeff() < 1e-8);
    for (Eigen::Index j = 0; j < m.size; ++j) {
      Eigen::VectorXd up = beta;
      Eigen::VectorXd dn = beta;
      up(j) += 1e-5;
      dn(j) -= 1e-5;
      const Eigen::VectorXd col = (log_partition(m, up, normalization_grid()).gradient -
                                   log_partition(m, dn, normalization_grid()).gradient) /
                                  2e-5;
      CHECK((lp.hessian.col(j) - col).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("property: normalization of each family")
{
  const auto grid = make_grid(512);
  Gen gen(12);
  for (int i = 0; i < 30; ++i) {
    const auto s = ModelSpec::series(gen.integer(1, 8));
    const auto e = ModelSpec::expfam(gen.integer(1, 6));
    const Eigen::VectorXd gs = ModelState(s, random_beta(gen, s, 2.0)).values(grid.points);
    const Eigen::VectorXd ge = ModelState(e, random_beta(gen, e, 2.0)).values(grid.points);
    CHECK(std::abs(grid.integrate(gs) - 1.0) < 1e-8);
    CHECK(std::abs(grid.integrate(ge) - 1.0) < 1e-8);
    CHECK((ge.array() > 0).all());
  }
}

TEST_CASE("property: g_grad matches finite differences for all families")
{
  Gen gen(13);
  const std::vector<ModelSpec> models{ ModelSpec::series(4), ModelSpec::expfam(3), ModelSpec::gmm(1),
                                       ModelSpec::gmm(2), ModelSpec::gmm(3) };
  for (const auto& m : models) {
    CAPTURE(m.to_string());
    for (int i = 0; i < 10; ++i) {
      const Eigen::VectorXd beta = random_beta(gen, m, 1.5);
      const double y = gen.uniform();
      const Eigen::VectorXd grad = g_grad(m, beta, y);
      for (Eigen::Index j = 0; j < beta.size(); ++j) {
        const double fd = derivative(
          [&](double s) {
            Eigen::VectorXd b = beta;
            b(j) = s;
            return g_eval(m, b, y);
          },
          beta(j), 1e-4);
        CHECK(std::abs(grad(j) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("ModelState matches the free functions")
{
  Gen gen(14);
  const auto m = ModelSpec::expfam(3);
  const Eigen::VectorXd beta = gen.vector(3, 0.5);
  const ModelState state(m, beta);
  const Eigen::VectorXd ys = Eigen::VectorXd::LinSpaced(7, 0.0, 1.0);
  const Eigen::VectorXd v = state.values(ys);
  const Eigen::MatrixXd d = state.gradients(ys);
  for (Eigen::Index i = 0; i < ys.size(); ++i) {
    CHECK(v(i) == doctest::Approx(g_eval(m, beta, ys(i))).epsilon(1e-14));
    CHECK((d.row(i).transpose() - g_grad(m, beta, ys(i))).cwiseAbs().maxCoeff() < 1e-14);
  }
  CHECK_THROWS_AS(ModelState(m, Eigen::VectorXd::Zero(2)), DomainError);
  CHECK_THROWS_AS(ModelState(m, Eigen::VectorXd::Constant(3, std::nan(""))), DomainError);
}

TEST_CASE("clip_to_density")
{
  const auto grid = make_grid(512);
  Gen gen(15);
  const Eigen::VectorXd dens = gen.density(grid);
  CHECK((clip_to_density(dens, grid) - dens).cwiseAbs().maxCoeff() < 1e-12);

  const Eigen::VectorXd wavy = cfdens::testing::cosine_density(grid, 1.5);
  REQUIRE(wavy.minCoeff() < 0.0);
  const Eigen::VectorXd clipped = clip_to_density(wavy, grid);
  CHECK(clipped.minCoeff() >= 0.0);
  CHECK(std::abs(grid.integrate(clipped) - 1.0) < 1e-10);

  CHECK_THROWS_WITH_AS(clip_to_density(Eigen::VectorXd::Zero(512), grid),
                       doctest::Contains("degenerate model"), DomainError);
}

TEST_CASE("model strings")
{
  for (const std::string s : { "series:d=4", "expfam:d=2", "gmm:k=3" })
    CHECK(ModelSpec::parse(s).to_string() == s);
  CHECK(ModelSpec::parse("gmm:k=2").beta_dim() == 5);
  CHECK(ModelSpec::parse("series:d=7").beta_dim() == 7);
  CHECK_THROWS_AS(ModelSpec::parse("series:k=2"), ConfigError);
  CHECK_THROWS_AS(ModelSpec::parse("spline:d=2"), ConfigError);
  CHECK_THROWS_AS(ModelSpec::parse("series:d=0"), ConfigError);
}
