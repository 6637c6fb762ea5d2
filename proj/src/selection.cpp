#include "cfdens/selection.hpp"
#include "cfdens/error.hpp"

#include <cmath>
#include <limits>

namespace cfdens {

namespace {

constexpr double kDropTol = 1e-8;

double fold_share(const NuisanceFit& fit, const FoldFit& fold)
{
  return static_cast<double>(fold.eval_rows.size()) / static_cast<double>(fit.n());
}

// Coordinates of p_a in an orthonormal system e (G x r): int e p_hat + P_n phi(e),
// fold-size weighted.
Eigen::VectorXd onestep_coordinates(const NuisanceFit& fit, int level, const Eigen::MatrixXd& e)
{
  const auto& grid = fit.grid;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(e.cols());
  for (const auto& fold : fit.folds) {
    const auto& arm = fold.arm(level);
    const auto phi = phi_a(fold.eval, level, arm, grid, e);
    theta += fold_share(fit, fold) *
             (e.transpose() * grid.weights.cwiseProduct(arm.marginal) + phi.correction);
  }
  return theta;
}

} // namespace

RiskResult pseudo_l2_risk(const NuisanceFit& fit, int level, const Eigen::Ref<const Eigen::VectorXd>& g)
{
  const auto& grid = fit.grid;
  if (g.size() != grid.size())
    throw DomainError("candidate must be tabulated on the grid");
  const double g2 = grid.integrate(g.cwiseProduct(g));
  RiskResult out;
  out.per_row.resize(static_cast<Eigen::Index>(fit.n()));
  Eigen::Index at = 0;
  for (const auto& fold : fit.folds) {
    const auto& arm = fold.arm(level);
    const Eigen::VectorXd gc = arm.cond.expect(grid, g);
    const Eigen::VectorXd g_obs = grid.interpolate_rows(g, fold.eval.outcome);
    for (Eigen::Index i = 0; i < gc.size(); ++i) {
      double v = gc(i);
      if (fold.eval.treatment[static_cast<std::size_t>(i)] == level)
        v += (g_obs(i) - gc(i)) / arm.propensity(i);
      out.per_row(at++) = -2.0 * v + g2;
    }
  }
  const double n = static_cast<double>(out.per_row.size());
  out.risk = out.per_row.mean();
  const double var = (out.per_row.array() - out.risk).square().sum() / n;
  out.se = std::sqrt(var / n);
  return out;
}

std::size_t choose_candidate(const std::vector<Candidate>& candidates,
                             const std::vector<double>& risk)
{
  std::size_t best = candidates.size();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (!candidates[k].feasible || !std::isfinite(risk[k]))
      continue;
    if (best == candidates.size()) {
      best = k;
      continue;
    }
    const double tol = 1e-12 * (1.0 + std::abs(risk[best]));
    if (risk[k] < risk[best] - tol)
      best = k;
    else if (std::abs(risk[k] - risk[best]) <= tol &&
             candidates[k].model.beta_dim() < candidates[best].model.beta_dim())
      best = k;
  }
  if (best == candidates.size())
    throw SolverError("model selection: every candidate failed to fit");
  return best;
}

RiskTable select_model(const ObservationTable& table,
                       const FoldPlan& folds,
                       int level,
                       const std::vector<ModelSpec>& models,
                       const NuisanceLearners& learners,
                       const EvalGrid& grid,
                       const SelectionOptions& opts)
{
  if (models.empty())
    throw ConfigError("model selection needs at least one candidate");
  if (folds.k_folds < 2)
    throw ConfigError("model selection needs at least two folds");
  RiskTable out;
  for (const auto& m : models)
    out.candidates.push_back({ m.to_string(), m, true, {} });
  const auto k = models.size();
  std::vector<double> sum(k, 0.0);
  std::vector<Eigen::VectorXd> rows(k);

  const auto scoring = cross_fit(table, folds, { level }, learners, grid);
  for (std::size_t f = 0; f < folds.k_folds; ++f) {
    const auto train_rows = folds.rows_not_in(f);
    const auto train = table.subset(train_rows);
    const auto inner_plan = make_folds(train.n(), folds.k_folds, opts.inner_seed + f);
    const auto inner = cross_fit(train, inner_plan, { level }, learners, grid);

    // score on fold f alone, with the nuisances trained off fold f
    NuisanceFit held;
    held.grid = grid;
    held.plan = folds;
    held.plan.n = scoring.folds[f].eval_rows.size();
    held.levels = { level };
    held.folds = { scoring.folds[f] };
    const double share = static_cast<double>(held.plan.n) / static_cast<double>(table.n());

    for (std::size_t c = 0; c < k; ++c) {
      auto& cand = out.candidates[c];
      if (!cand.feasible)
        continue;
      try {
        const auto est = solve_onestep(opts.distance, cand.model, inner, level, opts.solver);
        const auto r = pseudo_l2_risk(held, level, est.fitted_density);
        sum[c] += share * r.risk;
        Eigen::VectorXd& acc = rows[c];
        const Eigen::VectorXd prev = acc;
        acc.resize(prev.size() + r.per_row.size());
        acc << prev, r.per_row;
      } catch (const Error& e) {
        cand.feasible = false;
        cand.warning = e.what();
        out.warnings.push_back(cand.label + ": " + e.what());
      }
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!out.candidates[c].feasible) {
      out.risk.push_back(std::numeric_limits<double>::quiet_NaN());
      out.se.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const auto& r = rows[c];
    const double n = static_cast<double>(r.size());
    const double mean = r.mean();
    out.risk.push_back(sum[c]);
    out.se.push_back(std::sqrt((r.array() - mean).square().sum() / n / n));
  }
  out.chosen = choose_candidate(out.candidates, out.risk);
  return out;
}

AggregateEstimate aggregate_linear(const NuisanceFit& fit,
                                   int level,
                                   const Eigen::Ref<const Eigen::MatrixXd>& candidates)
{
  const auto& grid = fit.grid;
  const auto k = candidates.cols();
  if (candidates.rows() != grid.size() || k == 0)
    throw DomainError("aggregation candidates must be tabulated on the grid");

  // Weighted Gram-Schmidt: E = C T with E orthonormal under the quadrature.
  const auto ip = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    return grid.weights.dot(u.cwiseProduct(v));
  };
  Eigen::MatrixXd e(grid.size(), 0);
  Eigen::MatrixXd t(k, 0);
  AggregateEstimate out;
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd v = candidates.col(c);
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(k);
    coef(c) = 1.0;
    const double norm0 = std::sqrt(ip(v, v));
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index j = 0; j < e.cols(); ++j) {
        const double r = ip(v, e.col(j));
        v -= r * e.col(j);
        coef -= r * t.col(j);
      }
    const double norm = std::sqrt(ip(v, v));
    if (!(norm > kDropTol * std::max(1.0, norm0))) {
      out.dropped.push_back(static_cast<std::size_t>(c));
      continue;
    }
    e.conservativeResize(Eigen::NoChange, e.cols() + 1);
    t.conservativeResize(Eigen::NoChange, t.cols() + 1);
    e.col(e.cols() - 1) = v / norm;
    t.col(t.cols() - 1) = coef / norm;
  }
  const Eigen::VectorXd theta = onestep_coordinates(fit, level, e);
  out.weights = t * theta;
  out.raw = e * theta;
  out.density = clip_to_density(out.raw, grid);
  return out;
}

AggregateEstimate aggregate_pipeline(const ObservationTable& table,
                                     int level,
                                     const std::vector<ModelSpec>& models,
                                     const NuisanceLearners& learners,
                                     const EvalGrid& grid,
                                     const AggregationOptions& opts)
{
  if (models.empty())
    throw ConfigError("aggregation needs at least one candidate model");
  const auto split = make_folds(table.n(), 2, opts.seed);
  const DistanceSpec l2{};
  AggregateEstimate out;
  out.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(models.size()));
  out.raw = Eigen::VectorXd::Zero(grid.size());
  const std::size_t roles = opts.swap ? 2 : 1;
  for (std::size_t r = 0; r < roles; ++r) {
    const auto train = table.subset(split.rows_in(r));
    const auto test = table.subset(split.rows_in(1 - r));
    const auto train_fit = cross_fit(train, make_folds(train.n(), opts.folds, opts.seed + 1 + r),
                                     { level }, learners, grid);
    Eigen::MatrixXd cands(grid.size(), 0);
    std::vector<Eigen::Index> index;
    for (std::size_t m = 0; m < models.size(); ++m) {
      try {
        const auto est = solve_onestep(l2, models[m], train_fit, level, opts.solver);
        cands.conservativeResize(Eigen::NoChange, cands.cols() + 1);
        cands.col(cands.cols() - 1) = est.fitted_density;
        index.push_back(static_cast<Eigen::Index>(m));
      } catch (const Error&) {
        out.dropped.push_back(m);
      }
    }
    if (cands.cols() == 0)
      throw SolverError("aggregation: no candidate could be fitted");
    const auto test_fit = cross_fit(test, make_folds(test.n(), opts.folds, opts.seed + 3 + r),
                                    { level }, learners, grid);
    const auto agg = aggregate_linear(test_fit, level, cands);
    for (std::size_t j = 0; j < index.size(); ++j)
      out.weights(index[j]) += agg.weights(static_cast<Eigen::Index>(j)) / static_cast<double>(roles);
    out.raw += agg.raw / static_cast<double>(roles);
    out.roles.push_back("fit on split " + std::to_string(r) + ", aggregate on split " +
                        std::to_string(1 - r));
  }
  out.density = clip_to_density(out.raw, grid);
  return out;
}

} // namespace cfdens
