#include "cfdens/solver.hpp"
#include "cfdens/error.hpp"

#include <cmath>

namespace cfdens {

Eigen::MatrixXd fd_jacobian(const VectorField& f, const Eigen::VectorXd& x, double step)
{
  Eigen::MatrixXd jac;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = step * (1.0 + std::abs(x(j)));
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp(j) += h;
    xm(j) -= h;
    const Eigen::VectorXd col = (f(xp) - f(xm)) / (2.0 * h);
    if (jac.size() == 0)
      jac.resize(col.size(), x.size());
    jac.col(j) = col;
  }
  return jac;
}

NewtonResult damped_newton(const VectorField& f,
                           Eigen::VectorXd x0,
                           const NewtonOptions& opts,
                           const JacobianField& jacobian)
{
  NewtonResult out;
  out.x = std::move(x0);
  out.residual = f(out.x);
  if (!out.residual.allFinite())
    throw SolverError("estimating equation is non-finite at the starting point");
  double norm = out.residual.norm();
  out.scale = 1.0 + norm;
  out.history.push_back(norm);

  for (; out.iterations < opts.max_iter; ++out.iterations) {
    if (norm <= opts.tol * out.scale)
      break;
    Eigen::MatrixXd jac;
    try {
      jac = jacobian ? jacobian(out.x) : fd_jacobian(f, out.x, opts.fd_step);
    } catch (const DomainError&) {
      break;
    }
    if (!jac.allFinite())
      break;
    Eigen::VectorXd step = jac.colPivHouseholderQr().solve(-out.residual);
    if (!step.allFinite())
      break;
    if (opts.max_step > 0.0 && step.norm() > opts.max_step)
      step *= opts.max_step / step.norm();
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
      const Eigen::VectorXd trial = out.x + t * step;
      Eigen::VectorXd r;
      try {
        r = f(trial);
      } catch (const DomainError&) {
        continue;
      }
      if (r.allFinite() && r.norm() < norm) {
        out.x = trial;
        out.residual = std::move(r);
        norm = out.residual.norm();
        accepted = true;
        break;
      }
    }
    out.history.push_back(norm);
    if (!accepted)
      break;
  }
  out.converged = norm <= opts.accept_tol * out.scale;
  return out;
}

} // namespace cfdens
