#pragma once

#include "cfdens/distances.hpp"
#include "cfdens/models.hpp"
#include "cfdens/nuisance.hpp"

#include <Eigen/Dense>

#include <utility>

namespace cfdens {

//! Per-row influence values. `raw` is the phi map as written, whose mean is
//! the one-step correction; `centered` subtracts that mean, and the
//! covariance is taken over the centered values.
struct InfluenceValues
{
  Eigen::MatrixXd raw;        // n x m
  Eigen::VectorXd correction; // column means of raw
  Eigen::MatrixXd centered;   // raw minus correction, mean zero

  Eigen::Index rows() const { return raw.rows(); }
  //! Empirical covariance (divides by n).
  Eigen::MatrixXd covariance() const;
};

InfluenceValues make_influence(Eigen::MatrixXd raw);

//! Stacks several blocks of rows; each block keeps its own centering.
InfluenceValues pool_influence(const std::vector<InfluenceValues>& blocks);

//! phi_a applied to h on one fold's rows:
//!   1(A_i = a)/pi(X_i) (h(Y_i) - hc(X_i)) + hc(X_i) - mean_i hc(X_i),
//! with hc(x) = int h(y) eta(y|x) dy. `h_grid` is G x m; `h_obs` holds
//! h(Y_i) (n x m).
InfluenceValues phi_a(const ObservationTable& rows,
                      int level,
                      const ArmFit& arm,
                      const EvalGrid& grid,
                      const Eigen::Ref<const Eigen::MatrixXd>& h_grid,
                      const Eigen::Ref<const Eigen::MatrixXd>& h_obs);

//! Same, with h(Y_i) by linear interpolation on the grid.
InfluenceValues phi_a(const ObservationTable& rows,
                      int level,
                      const ArmFit& arm,
                      const EvalGrid& grid,
                      const Eigen::Ref<const Eigen::MatrixXd>& h_grid);

//! gamma_f(y; beta) = dg/dbeta (f1 + g f21) at each of `ys`, with p_a
//! linearly interpolated from the grid (rows are points).
Eigen::MatrixXd gamma_f(const DistanceSpec& distance,
                        const ModelState& g,
                        const Eigen::Ref<const Eigen::VectorXd>& p_a,
                        const EvalGrid& grid,
                        const Eigen::Ref<const Eigen::VectorXd>& ys);

//! gamma_f tabulated on the grid itself (G x p).
Eigen::MatrixXd gamma_f(const DistanceSpec& distance,
                        const ModelState& g,
                        const Eigen::Ref<const Eigen::VectorXd>& p_a,
                        const EvalGrid& grid);

//! (lambda_1, lambda_0) on the grid for the density effect D_f(p1, p0).
std::pair<Eigen::VectorXd, Eigen::VectorXd> lambdas(const DistanceSpec& distance,
                                                    const Eigen::Ref<const Eigen::VectorXd>& p1,
                                                    const Eigen::Ref<const Eigen::VectorXd>& p0);

//! g(y) f1(p_a(y), g(y)) for a fixed candidate g.
Eigen::VectorXd lambda_fixed_g(const DistanceSpec& distance,
                               const Eigen::Ref<const Eigen::VectorXd>& p_a,
                               const Eigen::Ref<const Eigen::VectorXd>& g);

} // namespace cfdens
