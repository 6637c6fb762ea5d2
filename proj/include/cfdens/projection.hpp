#pragma once

#include "cfdens/distances.hpp"
#include "cfdens/eif.hpp"
#include "cfdens/models.hpp"
#include "cfdens/nuisance.hpp"
#include "cfdens/solver.hpp"

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace cfdens {

struct SolverOptions
{
  NewtonOptions newton;
  //! Skip the closed forms and always use the generic root-finder.
  bool force_generic = false;
};

struct SolverReport
{
  std::string method; // "closed_form", "expfam_newton" or "damped_newton"
  int iterations = 0;
  double residual = 0.0;
  double residual_at_start = 0.0;
  std::vector<double> history;
};

struct ProjectionEstimate
{
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd covariance; // already divided by n
  std::vector<std::pair<double, double>> wald_ci;
  Eigen::VectorXd fitted_density; // clip_to_density(g(.; beta_hat)) on the grid
  SolverReport solver;
  Eigen::MatrixXd jacobian;  // dU/dbeta at beta_hat
  InfluenceValues influence; // phi_a(gamma_f(.; beta_hat)), pooled over folds
};

//! int dg/dbeta (f(p, g) + g f2(p, g)) dy on the grid.
Eigen::VectorXd moment(const DistanceSpec& distance,
                       const ModelSpec& model,
                       const Eigen::Ref<const Eigen::VectorXd>& beta,
                       const Eigen::Ref<const Eigen::VectorXd>& p_a,
                       const EvalGrid& grid);

//! moment() with an estimated marginal in place of p_a.
Eigen::VectorXd moment_plugin(const DistanceSpec& distance,
                              const ModelSpec& model,
                              const Eigen::Ref<const Eigen::VectorXd>& beta,
                              const Eigen::Ref<const Eigen::VectorXd>& p_hat,
                              const EvalGrid& grid);

//! The distance being minimized, int f(p_a, g) g dy, evaluated with the same
//! clamping as moment() so that moment() is its exact gradient.
double projection_objective(const DistanceSpec& distance,
                            const ModelSpec& model,
                            const Eigen::Ref<const Eigen::VectorXd>& beta,
                            const Eigen::Ref<const Eigen::VectorXd>& p_a,
                            const EvalGrid& grid);

//! Cross-fitted estimating function: fold-size-weighted average over folds of
//! m_hat(beta) + P_n phi_a(gamma_f(Y; beta)).
Eigen::VectorXd onestep_equation(const DistanceSpec& distance,
                                 const ModelSpec& model,
                                 const Eigen::Ref<const Eigen::VectorXd>& beta,
                                 const NuisanceFit& fit,
                                 int level);

//! Solves the cross-fitted one-step equation. Closed forms are used for
//! L2sq with the cosine series and KL with the exponential family.
ProjectionEstimate solve_onestep(const DistanceSpec& distance,
                                 const ModelSpec& model,
                                 const NuisanceFit& fit,
                                 int level,
                                 const SolverOptions& opts = {});

struct Sandwich
{
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd jacobian;
  InfluenceValues influence;
};

//! V^-1 Cov(phi) V^-T / n with V = dU/dbeta at beta_hat.
Sandwich sandwich_cov(const DistanceSpec& distance,
                      const ModelSpec& model,
                      const Eigen::Ref<const Eigen::VectorXd>& beta_hat,
                      const NuisanceFit& fit,
                      int level);

//! Root of the population moment for a known p_a, from `start` (0 by default).
NewtonResult solve_moment(const DistanceSpec& distance,
                          const ModelSpec& model,
                          const Eigen::Ref<const Eigen::VectorXd>& p_a,
                          const EvalGrid& grid,
                          const NewtonOptions& opts = {},
                          const Eigen::VectorXd& start = {});

} // namespace cfdens
