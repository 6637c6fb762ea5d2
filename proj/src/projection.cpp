#include "cfdens/projection.hpp"
#include "cfdens/error.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace cfdens {

namespace {

constexpr double kWaldZ = 1.959963984540054;
constexpr double kMinModelMass = 0.5;

double fold_share(const NuisanceFit& fit, const FoldFit& fold)
{
  return static_cast<double>(fold.eval_rows.size()) / static_cast<double>(fit.n());
}

bool is_l2_series(const DistanceSpec& d, const ModelSpec& m)
{
  return d.kind == DistanceKind::l2sq && m.kind == ModelKind::series;
}

bool is_kl_expfam(const DistanceSpec& d, const ModelSpec& m)
{
  return d.kind == DistanceKind::kl && m.kind == ModelKind::expfam;
}

Eigen::VectorXd moment_from_state(const DistanceSpec& distance,
                                  const ModelState& state,
                                  const Eigen::Ref<const Eigen::VectorXd>& p,
                                  const EvalGrid& grid)
{
  if (p.size() != grid.size())
    throw DomainError("moment: density must be tabulated on the grid");
  const Eigen::VectorXd g = state.values(grid.points);
  const Eigen::MatrixXd dg = state.gradients(grid.points);
  Eigen::VectorXd wf(grid.size());
  for (Eigen::Index j = 0; j < grid.size(); ++j) {
    if (!std::isfinite(p(j)))
      throw DomainError("moment: non-finite density at grid index " + std::to_string(j));
    wf(j) = grid.weights(j) * moment_factor(distance, p(j), g(j));
  }
  return dg.transpose() * wf;
}

// phi_a(gamma_f(.; beta)) on one fold.
InfluenceValues fold_influence(const DistanceSpec& distance,
                               const ModelState& state,
                               const FoldFit& fold,
                               int level,
                               const EvalGrid& grid)
{
  const auto& arm = fold.arm(level);
  const Eigen::MatrixXd h_grid = gamma_f(distance, state, arm.marginal, grid);
  const Eigen::MatrixXd h_obs = gamma_f(distance, state, arm.marginal, grid, fold.eval.outcome);
  return phi_a(fold.eval, level, arm, grid, h_grid, h_obs);
}

// Pooled phi_a of the cosine basis and the fold-weighted int b p_hat.
struct BasisTarget
{
  Eigen::VectorXd plugin;
  InfluenceValues phi;
};

BasisTarget basis_target(const NuisanceFit& fit, int level, Eigen::Index d)
{
  const auto& grid = fit.grid;
  const Eigen::MatrixXd b = cosine_basis(grid.points, d);
  BasisTarget out{ Eigen::VectorXd::Zero(d), {} };
  std::vector<InfluenceValues> blocks;
  for (const auto& fold : fit.folds) {
    const auto& arm = fold.arm(level);
    out.plugin += fold_share(fit, fold) * (b.transpose() * grid.weights.cwiseProduct(arm.marginal));
    blocks.push_back(
      phi_a(fold.eval, level, arm, grid, b, cosine_basis(fold.eval.outcome, d)));
  }
  out.phi = pool_influence(blocks);
  return out;
}

Eigen::MatrixXd gram(const EvalGrid& grid, Eigen::Index d)
{
  const Eigen::MatrixXd b = cosine_basis(grid.points, d);
  return b.transpose() * grid.weights.asDiagonal() * b;
}

// Smoothed TV is stiff for large t and its equation has spurious far-field
// roots, so the root is followed from t = 1 up to the requested sharpness.
std::vector<DistanceSpec> continuation_path(const DistanceSpec& d)
{
  std::vector<DistanceSpec> path;
  if (d.kind == DistanceKind::smoothed_tv)
    for (double t = 1.0; t < d.tv_t; t *= 2.0) {
      path.push_back(d);
      path.back().tv_t = t;
    }
  path.push_back(d);
  return path;
}

// Far from the root the TV equation is nearly flat, so full Newton steps
// overshoot into the far field.
NewtonOptions stage_options(const DistanceSpec& d, NewtonOptions opts)
{
  if (d.kind == DistanceKind::smoothed_tv && opts.max_step == 0.0)
    opts.max_step = 1.0;
  return opts;
}

Eigen::VectorXd pooled_marginal(const NuisanceFit& fit, int level)
{
  Eigen::VectorXd p = Eigen::VectorXd::Zero(fit.grid.size());
  for (const auto& fold : fit.folds)
    p += fold_share(fit, fold) * fold.arm(level).marginal;
  return p;
}

// Equal weights, means at the (j + 1/2)/k quantiles of p, common scale sd/k.
Eigen::VectorXd mixture_start(const Eigen::VectorXd& p, const EvalGrid& grid, Eigen::Index k)
{
  const Eigen::VectorXd w = grid.weights.cwiseProduct(p.cwiseMax(0.0)) /
                            grid.integrate(p.cwiseMax(0.0));
  const double mean = w.dot(grid.points);
  const double sd =
    std::sqrt(std::max(w.dot((grid.points.array() - mean).square().matrix()), 1e-4));
  MixtureParams start{ Eigen::VectorXd::Constant(k, 1.0 / double(k)), Eigen::VectorXd(k),
                       Eigen::VectorXd::Constant(k, std::max(sd / double(k), 2.0 * kSigmaMin)) };
  double cum = 0.0;
  Eigen::Index j = 0;
  for (Eigen::Index g = 0; g < grid.size() && j < k; ++g) {
    cum += w(g);
    while (j < k && cum >= (double(j) + 0.5) / double(k))
      start.means(j++) = grid.points(g);
  }
  for (; j < k; ++j)
    start.means(j) = grid.points(grid.size() - 1);
  return mixture_beta(start);
}

} // namespace

Eigen::VectorXd moment(const DistanceSpec& distance,
                       const ModelSpec& model,
                       const Eigen::Ref<const Eigen::VectorXd>& beta,
                       const Eigen::Ref<const Eigen::VectorXd>& p_a,
                       const EvalGrid& grid)
{
  return moment_from_state(distance, ModelState(model, beta), p_a, grid);
}

Eigen::VectorXd moment_plugin(const DistanceSpec& distance,
                              const ModelSpec& model,
                              const Eigen::Ref<const Eigen::VectorXd>& beta,
                              const Eigen::Ref<const Eigen::VectorXd>& p_hat,
                              const EvalGrid& grid)
{
  return moment(distance, model, beta, p_hat, grid);
}

double projection_objective(const DistanceSpec& distance,
                            const ModelSpec& model,
                            const Eigen::Ref<const Eigen::VectorXd>& beta,
                            const Eigen::Ref<const Eigen::VectorXd>& p_a,
                            const EvalGrid& grid)
{
  const Eigen::VectorXd g = ModelState(model, beta).values(grid.points);
  double total = 0.0;
  for (Eigen::Index j = 0; j < grid.size(); ++j)
    total += grid.weights(j) * weighted_f(distance, p_a(j), g(j));
  return total;
}

Eigen::VectorXd onestep_equation(const DistanceSpec& distance,
                                 const ModelSpec& model,
                                 const Eigen::Ref<const Eigen::VectorXd>& beta,
                                 const NuisanceFit& fit,
                                 int level)
{
  const ModelState state(model, beta);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(model.beta_dim());
  for (const auto& fold : fit.folds) {
    const auto& arm = fold.arm(level);
    const auto phi = fold_influence(distance, state, fold, level, fit.grid);
    u += fold_share(fit, fold) *
         (moment_from_state(distance, state, arm.marginal, fit.grid) + phi.correction);
  }
  return u;
}

Sandwich sandwich_cov(const DistanceSpec& distance,
                      const ModelSpec& model,
                      const Eigen::Ref<const Eigen::VectorXd>& beta_hat,
                      const NuisanceFit& fit,
                      int level)
{
  const ModelState state(model, beta_hat);
  Sandwich out;
  if (is_l2_series(distance, model)) {
    out.jacobian = 2.0 * gram(fit.grid, model.size);
  } else if (is_kl_expfam(distance, model)) {
    out.jacobian = log_partition(model, beta_hat, normalization_grid()).hessian;
  } else {
    const VectorField u = [&](const Eigen::VectorXd& b) {
      return onestep_equation(distance, model, b, fit, level);
    };
    out.jacobian = fd_jacobian(u, beta_hat);
  }
  std::vector<InfluenceValues> blocks;
  for (const auto& fold : fit.folds)
    blocks.push_back(fold_influence(distance, state, fold, level, fit.grid));
  out.influence = pool_influence(blocks);

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.jacobian);
  const auto& sv = svd.singularValues();
  if (!(sv.size() > 0 && sv(sv.size() - 1) > 1e-12 * std::max(1.0, sv(0))))
    throw SolverError("singular Jacobian of the estimating equation (rank deficient); "
                      "reduce the model dimension");
  const Eigen::MatrixXd vinv = out.jacobian.inverse();
  out.covariance = vinv * out.influence.covariance() * vinv.transpose() /
                   static_cast<double>(fit.n());
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

ProjectionEstimate solve_onestep(const DistanceSpec& distance,
                                 const ModelSpec& model,
                                 const NuisanceFit& fit,
                                 int level,
                                 const SolverOptions& opts)
{
  const auto p = model.beta_dim();
  const VectorField u = [&](const Eigen::VectorXd& b) {
    return onestep_equation(distance, model, b, fit, level);
  };
  ProjectionEstimate est;
  auto& rep = est.solver;
  rep.residual_at_start = u(Eigen::VectorXd::Zero(p)).norm();

  if (!opts.force_generic && is_l2_series(distance, model)) {
    // U(beta) = 2 (G beta + int b - int b p_hat - P_n phi(b)) is linear. With
    // an exact grid (G = I, int b = 0) this is the IPW-plus-regression mean.
    const auto t = basis_target(fit, level, model.size);
    const Eigen::MatrixXd b = cosine_basis(fit.grid.points, model.size);
    const Eigen::VectorXd ib = b.transpose() * fit.grid.weights;
    est.beta_hat = gram(fit.grid, model.size).ldlt().solve(t.plugin + t.phi.correction - ib);
    rep.method = "closed_form";
  } else if (!opts.force_generic && is_kl_expfam(distance, model)) {
    // Moment matching dC/dbeta = tau with tau the doubly robust mean of b.
    const auto t = basis_target(fit, level, model.size);
    const Eigen::VectorXd tau = t.plugin + t.phi.correction;
    if ((tau.array().abs() >= std::numbers::sqrt2).any())
      throw SolverError("infeasible moment: estimated basis mean lies outside the "
                        "exponential family's mean set");
    const VectorField f = [&](const Eigen::VectorXd& b) -> Eigen::VectorXd {
      return log_partition(model, b, normalization_grid()).gradient - tau;
    };
    const JacobianField jac = [&](const Eigen::VectorXd& b) -> Eigen::MatrixXd {
      return log_partition(model, b, normalization_grid()).hessian;
    };
    auto nr = damped_newton(f, Eigen::VectorXd::Zero(p), opts.newton, jac);
    if (!nr.converged || nr.x.norm() > 50.0)
      throw SolverError("infeasible moment: no exponential-family parameter matches the "
                        "estimated basis mean (|beta| = " + std::to_string(nr.x.norm()) + ")");
    est.beta_hat = nr.x;
    rep.iterations = nr.iterations;
    rep.history = nr.history;
    rep.method = "expfam_newton";
  } else {
    // A mixture can push its mass off [0, 1], where every moment vanishes
    // trivially; such trial points are rejected.
    Eigen::VectorXd start = model.kind == ModelKind::gmm
                              ? mixture_start(pooled_marginal(fit, level), fit.grid, model.size)
                              : Eigen::VectorXd::Zero(p);
    NewtonResult nr;
    for (const auto& stage : continuation_path(distance)) {
      const VectorField guarded = [&](const Eigen::VectorXd& b) {
        if (model.kind == ModelKind::gmm &&
            fit.grid.integrate(ModelState(model, b).values(fit.grid.points)) < kMinModelMass)
          throw DomainError("mixture has less than half its mass on [0, 1]");
        return onestep_equation(stage, model, b, fit, level);
      };
      nr = damped_newton(guarded, start, stage_options(distance, opts.newton));
      start = nr.x;
    }
    rep.iterations = nr.iterations;
    rep.history = nr.history;
    rep.method = "damped_newton";
    if (!nr.converged) {
      std::ostringstream os;
      os << "one-step solver did not converge for " << model.to_string() << " / "
         << distance.to_string() << "; residual trace:";
      for (double h : nr.history)
        os << ' ' << h;
      throw SolverError(os.str());
    }
    est.beta_hat = nr.x;
  }
  rep.residual = u(est.beta_hat).norm();

  auto sw = sandwich_cov(distance, model, est.beta_hat, fit, level);
  est.covariance = std::move(sw.covariance);
  est.jacobian = std::move(sw.jacobian);
  est.influence = std::move(sw.influence);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double half = kWaldZ * std::sqrt(std::max(est.covariance(j, j), 0.0));
    est.wald_ci.emplace_back(est.beta_hat(j) - half, est.beta_hat(j) + half);
  }
  est.fitted_density =
    clip_to_density(ModelState(model, est.beta_hat).values(fit.grid.points), fit.grid);
  return est;
}

NewtonResult solve_moment(const DistanceSpec& distance,
                          const ModelSpec& model,
                          const Eigen::Ref<const Eigen::VectorXd>& p_a,
                          const EvalGrid& grid,
                          const NewtonOptions& opts,
                          const Eigen::VectorXd& start)
{
  const Eigen::VectorXd p = p_a;
  if (start.size()) {
    const VectorField f = [&](const Eigen::VectorXd& b) {
      return moment(distance, model, b, p, grid);
    };
    return damped_newton(f, start, opts);
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(model.beta_dim());
  NewtonResult nr;
  for (const auto& stage : continuation_path(distance)) {
    const VectorField f = [&](const Eigen::VectorXd& b) {
      return moment(stage, model, b, p, grid);
    };
    nr = damped_newton(f, x, stage_options(distance, opts));
    x = nr.x;
  }
  return nr;
}

} // namespace cfdens
