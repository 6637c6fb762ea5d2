#include "cfdens/eif.hpp"
#include "cfdens/error.hpp"

#include <cmath>

namespace cfdens {

Eigen::MatrixXd InfluenceValues::covariance() const
{
  if (centered.rows() == 0)
    return Eigen::MatrixXd::Zero(centered.cols(), centered.cols());
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(centered.rows());
  return 0.5 * (cov + cov.transpose());
}

InfluenceValues make_influence(Eigen::MatrixXd raw)
{
  InfluenceValues out;
  out.correction = raw.colwise().mean().transpose();
  out.centered = raw.rowwise() - out.correction.transpose();
  out.raw = std::move(raw);
  return out;
}

InfluenceValues pool_influence(const std::vector<InfluenceValues>& blocks)
{
  Eigen::Index n = 0;
  Eigen::Index m = blocks.empty() ? 0 : blocks.front().raw.cols();
  for (const auto& b : blocks) {
    if (b.raw.cols() != m)
      throw DomainError("influence blocks have different widths");
    n += b.rows();
  }
  InfluenceValues out;
  out.raw.resize(n, m);
  out.centered.resize(n, m);
  out.correction = Eigen::VectorXd::Zero(m);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.raw.middleRows(at, b.rows()) = b.raw;
    out.centered.middleRows(at, b.rows()) = b.centered;
    out.correction += b.correction * static_cast<double>(b.rows());
    at += b.rows();
  }
  if (n > 0)
    out.correction /= static_cast<double>(n);
  return out;
}

InfluenceValues phi_a(const ObservationTable& rows,
                      int level,
                      const ArmFit& arm,
                      const EvalGrid& grid,
                      const Eigen::Ref<const Eigen::MatrixXd>& h_grid,
                      const Eigen::Ref<const Eigen::MatrixXd>& h_obs)
{
  const auto n = static_cast<Eigen::Index>(rows.n());
  if (h_grid.rows() != grid.size())
    throw DomainError("phi_a: h must be tabulated on the grid");
  if (h_obs.rows() != n || h_obs.cols() != h_grid.cols())
    throw DomainError("phi_a: h(Y) must have one row per observation");
  if (arm.propensity.size() != n || arm.cond.rows() != n)
    throw DomainError("phi_a: nuisance fit does not match the rows");
  for (Eigen::Index j = 0; j < h_grid.rows(); ++j)
    if (!h_grid.row(j).allFinite())
      throw DomainError("phi_a: h is non-finite at grid index " + std::to_string(j));

  const Eigen::MatrixXd hc = arm.cond.expect(grid, h_grid);
  const Eigen::RowVectorXd hc_mean = hc.colwise().mean();
  Eigen::MatrixXd raw = hc.rowwise() - hc_mean;
  for (Eigen::Index i = 0; i < n; ++i)
    if (rows.treatment[static_cast<std::size_t>(i)] == level)
      raw.row(i) += (h_obs.row(i) - hc.row(i)) / arm.propensity(i);
  return make_influence(std::move(raw));
}

InfluenceValues phi_a(const ObservationTable& rows,
                      int level,
                      const ArmFit& arm,
                      const EvalGrid& grid,
                      const Eigen::Ref<const Eigen::MatrixXd>& h_grid)
{
  return phi_a(rows, level, arm, grid, h_grid, grid.interpolate_rows(h_grid, rows.outcome));
}

Eigen::MatrixXd gamma_f(const DistanceSpec& distance,
                        const ModelState& g,
                        const Eigen::Ref<const Eigen::VectorXd>& p_a,
                        const EvalGrid& grid,
                        const Eigen::Ref<const Eigen::VectorXd>& ys)
{
  if (p_a.size() != grid.size())
    throw DomainError("gamma_f: p_a must be tabulated on the grid");
  const Eigen::VectorXd gv = g.values(ys);
  Eigen::MatrixXd out = g.gradients(ys);
  for (Eigen::Index i = 0; i < ys.size(); ++i)
    out.row(i) *= gamma_factor(distance, grid.interpolate(p_a, ys(i)), gv(i));
  return out;
}

Eigen::MatrixXd gamma_f(const DistanceSpec& distance,
                        const ModelState& g,
                        const Eigen::Ref<const Eigen::VectorXd>& p_a,
                        const EvalGrid& grid)
{
  if (p_a.size() != grid.size())
    throw DomainError("gamma_f: p_a must be tabulated on the grid");
  const Eigen::VectorXd gv = g.values(grid.points);
  Eigen::MatrixXd out = g.gradients(grid.points);
  for (Eigen::Index j = 0; j < grid.size(); ++j)
    out.row(j) *= gamma_factor(distance, p_a(j), gv(j));
  return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> lambdas(const DistanceSpec& distance,
                                                    const Eigen::Ref<const Eigen::VectorXd>& p1,
                                                    const Eigen::Ref<const Eigen::VectorXd>& p0)
{
  if (p1.size() != p0.size())
    throw DomainError("lambdas: densities must share the grid");
  Eigen::VectorXd l1(p1.size());
  Eigen::VectorXd l0(p1.size());
  for (Eigen::Index j = 0; j < p1.size(); ++j) {
    if (!std::isfinite(p1(j)) || !std::isfinite(p0(j)))
      throw DomainError("lambdas: non-finite density at grid index " + std::to_string(j));
    l1(j) = weighted_f1(distance, p1(j), p0(j));
    l0(j) = moment_factor(distance, p1(j), p0(j));
  }
  return { l1, l0 };
}

Eigen::VectorXd lambda_fixed_g(const DistanceSpec& distance,
                               const Eigen::Ref<const Eigen::VectorXd>& p_a,
                               const Eigen::Ref<const Eigen::VectorXd>& g)
{
  if (p_a.size() != g.size())
    throw DomainError("lambda_fixed_g: densities must share the grid");
  Eigen::VectorXd out(g.size());
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    if (!std::isfinite(p_a(j)) || !std::isfinite(g(j)))
      throw DomainError("lambda_fixed_g: non-finite density at grid index " +
                        std::to_string(j));
    out(j) = weighted_f1(distance, p_a(j), g(j));
  }
  return out;
}

} // namespace cfdens
