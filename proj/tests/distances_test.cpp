#include "cfdens/distances.hpp"
#include "cfdens/error.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace cfdens;
using cfdens::testing::derivative;
using cfdens::testing::Gen;

namespace {

std::vector<DistanceSpec> all_kinds()
{
  return { DistanceSpec::parse("l2"), DistanceSpec::parse("kl"), DistanceSpec::parse("chisq"),
           DistanceSpec::parse("hellinger"), DistanceSpec::parse("tv:t=50"),
           DistanceSpec::parse("tv:t=20,kind=erf") };
}

bool close(double a, double b, double rel)
{
  return std::abs(a - b) <= rel * std::max(1.0, std::abs(b));
}

} // namespace

TEST_CASE("derivative table values")
{
  const auto l2 = DistanceSpec::parse("l2");
  CHECK(f_eval(l2, 2, 1) == 1.0);
  CHECK(f1(l2, 2, 1) == 2.0);
  CHECK(f2(l2, 2, 1) == -3.0);
  CHECK(f21(l2, 2, 1) == -4.0); // -2p/q^2

  const auto kl = DistanceSpec::parse("kl");
  CHECK(f_eval(kl, 1, 1) == 0.0);
  CHECK(f1(kl, 1, 1) == doctest::Approx(1.0));
  CHECK(f2(kl, 1, 1) == doctest::Approx(-1.0));

  const auto he = DistanceSpec::parse("hellinger");
  CHECK(f_eval(he, 4, 1) == doctest::Approx(1.0));
  CHECK(f1(he, 4, 1) == doctest::Approx(0.5));
  CHECK(f2(he, 4, 1) == doctest::Approx(-2.0));
}

TEST_CASE("property: f1, f2, f21 match finite differences on a (p, q) lattice")
{
  const std::vector<double> lattice{ 0.03, 0.1, 0.35, 0.8, 1.0, 1.7, 3.2, 6.0 };
  for (const auto& d : all_kinds()) {
    CAPTURE(d.to_string());
    for (double p : lattice)
      for (double q : lattice) {
        CAPTURE(p);
        CAPTURE(q);
        const double h = 1e-4 * std::min(p, q);
        const double dp = derivative([&](double s) { return f_eval(d, s, q); }, p, h);
        const double dq = derivative([&](double s) { return f_eval(d, p, s); }, q, h);
        const double dpq = derivative([&](double s) { return f1(d, p, s); }, q, h);
        CHECK(close(f1(d, p, q), dp, 1e-6));
        CHECK(close(f2(d, p, q), dq, 1e-6));
        CHECK(close(f21(d, p, q), dpq, 1e-6));
      }
  }
}

TEST_CASE("property: the estimator combinations agree with the raw table")
{
  Gen gen(4);
  for (const auto& d : all_kinds())
    for (int i = 0; i < 200; ++i) {
      const double p = std::exp(gen.uniform(-4, 2));
      const double q = std::exp(gen.uniform(-4, 2));
      CHECK(close(weighted_f(d, p, q), f_eval(d, p, q) * q, 1e-12));
      CHECK(close(moment_factor(d, p, q), f_eval(d, p, q) + q * f2(d, p, q), 1e-10));
      CHECK(close(gamma_factor(d, p, q), f1(d, p, q) + q * f21(d, p, q), 1e-10));
      CHECK(close(weighted_f1(d, p, q), q * f1(d, p, q), 1e-12));
    }
}

TEST_CASE("nu_t")
{
  for (double t : { 1.0, 5.0, 50.0 })
    for (auto kind : { SmoothingKind::tanh, SmoothingKind::erf })
      CHECK(nu_t(0.0, t, kind).value == 0.0);
  CHECK(std::abs(nu_t(1.0, 10.0).value - 1.0) < 1e-8);

  Gen gen(8);
  for (auto kind : { SmoothingKind::tanh, SmoothingKind::erf })
    for (int i = 0; i < 20; ++i) {
      const double y = gen.uniform(-1, 1);
      const double t = gen.uniform(1, 30);
      const auto nu = nu_t(y, t, kind);
      const double d1 = derivative([&](double s) { return nu_t(s, t, kind).value; }, y, 1e-4);
      const double d2 = derivative([&](double s) { return nu_t(s, t, kind).d1; }, y, 1e-4);
      CHECK(close(nu.d1, d1, 1e-6));
      CHECK(close(nu.d2, d2, 1e-6));
      // y tanh(ty) and y erf(ty) are even surrogates of |y|
      CHECK(nu_t(-y, t, kind).value == doctest::Approx(nu.value).epsilon(1e-14));
      CHECK(nu.value >= 0.0);
      CHECK(nu.value <= std::abs(y));
    }
}

TEST_CASE("nu_t approaches |y| as t grows")
{
  const auto grid = make_grid(201);
  for (auto kind : { SmoothingKind::tanh, SmoothingKind::erf }) {
    double prev = std::numeric_limits<double>::infinity();
    for (double t : { 5.0, 10.0, 20.0 }) {
      double worst = 0.0;
      for (Eigen::Index j = 0; j < grid.size(); ++j) {
        const double y = 2.0 * grid.points(j) - 1.0;
        worst = std::max(worst, std::abs(nu_t(y, t, kind).value - std::abs(y)));
      }
      CHECK(worst < prev);
      prev = worst;
    }
  }
}

TEST_CASE("divergence examples")
{
  const auto grid = make_grid(512);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(grid.size());
  for (const auto& d : all_kinds())
    CHECK(std::abs(divergence(d, one, one, grid)) < 1e-10);
  const Eigen::VectorXd p = cfdens::testing::cosine_density(grid, 0.5);
  CHECK(std::abs(divergence(DistanceSpec::parse("l2"), p, one, grid) - 0.25) < 1e-6);
}

TEST_CASE("property: divergences are nonnegative, vanish on the diagonal, and TV sits between H^2/2 and H")
{
  const auto grid = make_grid(512);
  Gen gen(21);
  const auto tv = DistanceSpec::parse("tv:t=200");
  const auto he = DistanceSpec::parse("hellinger");
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd p = gen.density(grid, 4, 0.8);
    const Eigen::VectorXd q = gen.density(grid, 4, 0.8);
    for (const auto& d : all_kinds()) {
      CHECK(divergence(d, p, q, grid) >= -1e-10);
      CHECK(std::abs(divergence(d, p, p, grid)) < 1e-10);
    }
    const double h2 = divergence(he, p, q, grid);
    const double t = divergence(tv, p, q, grid);
    CHECK(h2 / 2.0 <= t + 1e-3);
    CHECK(t <= std::sqrt(h2) + 1e-3);
  }
}

TEST_CASE("domain errors")
{
  const auto kl = DistanceSpec::parse("kl");
  CHECK_THROWS_WITH_AS(f_eval(kl, 1.0, 0.0), doctest::Contains("Kullback-Leibler"), DomainError);
  CHECK_THROWS_AS(f1(kl, 0.0, 1.0), DomainError);
  CHECK_THROWS_AS(f_eval(kl, std::nan(""), 1.0), DomainError);
  const auto grid = make_grid(16);
  Eigen::VectorXd p = Eigen::VectorXd::Ones(16);
  Eigen::VectorXd q = Eigen::VectorXd::Ones(16);
  q(5) = 0.0;
  CHECK_THROWS_WITH_AS(divergence(kl, p, q, grid), doctest::Contains("grid index 5"), DomainError);
  p(3) = -1.0;
  CHECK_THROWS_WITH_AS(divergence(DistanceSpec{}, p, Eigen::VectorXd::Ones(16), grid),
                       doctest::Contains("grid index 3"), DomainError);
  // L2 and TV need no floor
  CHECK(divergence(DistanceSpec{}, Eigen::VectorXd::Ones(16), q, grid) > 0.0);
}

TEST_CASE("distance strings round trip")
{
  for (const std::string s : { "l2", "kl", "chisq", "hellinger", "tv:t=50", "tv:t=12.5,kind=erf" })
    CHECK(DistanceSpec::parse(s).to_string() == s);
  CHECK(DistanceSpec::parse("tv").tv_t == 50.0);
  CHECK_THROWS_AS(DistanceSpec::parse("tv:t=-1"), ConfigError);
  CHECK_THROWS_AS(DistanceSpec::parse("l1"), ConfigError);
}
