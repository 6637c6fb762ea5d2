#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace cfdens {

using VectorField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianField = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

struct NewtonOptions
{
  double tol = 1e-10;        // target, relative to 1 + |F(x0)|
  double accept_tol = 1e-8;  // below this the root is accepted
  int max_iter = 100;
  int max_halvings = 20;
  double fd_step = 1e-5;     // scaled by 1 + |x_j|
  double max_step = 0.0;     // cap on the Newton step norm; 0 means none
};

struct NewtonResult
{
  Eigen::VectorXd x;
  Eigen::VectorXd residual;
  int iterations = 0;
  bool converged = false;
  double scale = 1.0; // 1 + |F(x0)|
  std::vector<double> history;
};

//! Central differences, step h (1 + |x_j|) in coordinate j.
Eigen::MatrixXd fd_jacobian(const VectorField& f, const Eigen::VectorXd& x, double step = 1e-5);

//! Newton's method with step halving on |F|. Evaluations that throw
//! DomainError count as failed trial steps. Never throws on
//! non-convergence; check `converged`.
NewtonResult damped_newton(const VectorField& f,
                           Eigen::VectorXd x0,
                           const NewtonOptions& opts = {},
                           const JacobianField& jacobian = {});

} // namespace cfdens
