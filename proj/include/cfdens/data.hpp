#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cfdens {

//! Label assigned to rows that received neither arm after missing-outcome
//! recoding.
inline constexpr int kNeitherArm = -1;

struct RescaleParams
{
  double y_min = 0.0;
  double y_max = 1.0;

  double rescale(double y) const { return (y - y_min) / (y_max - y_min); }
  double unrescale(double u) const { return y_min + u * (y_max - y_min); }
};

//! The i.i.d. sample (X, A, Y). Outcomes live on [0, 1]; `rescale` maps back
//! to the original units.
struct ObservationTable
{
  Eigen::MatrixXd covariates; // n x d
  std::vector<int> treatment;
  Eigen::VectorXd outcome;
  std::vector<bool> observed;
  RescaleParams rescale;

  std::size_t n() const { return treatment.size(); }
  Eigen::Index d() const { return covariates.cols(); }
  std::size_t count(int level) const;
  std::vector<int> levels() const;

  ObservationTable subset(std::span<const std::size_t> rows) const;

  //! Throws DataError when shapes disagree, a value is non-finite or an
  //! outcome of an observed row falls outside [0, 1].
  void validate() const;
};

struct CsvSchema
{
  std::vector<std::string> x_cols;
  std::string a_col;
  std::string y_col;
};

//! Reads a header-first CSV. Observed outcomes are min-max rescaled to
//! [0, 1]; cells equal to `missing_code` are treated as missing outcomes and
//! recoded via recode_missingness.
ObservationTable load_csv(const std::string& path,
                          const CsvSchema& schema,
                          const std::optional<std::string>& missing_code = {});

//! Builds a table from raw arrays; outcomes are rescaled with min-max over
//! observed rows.
ObservationTable make_table(Eigen::MatrixXd covariates,
                            std::vector<int> treatment,
                            const Eigen::VectorXd& raw_outcome,
                            std::vector<bool> observed = {});

//! Builds a table whose outcomes are already on [0, 1] (identity rescale).
ObservationTable make_unit_table(Eigen::MatrixXd covariates,
                                 std::vector<int> treatment,
                                 Eigen::VectorXd outcome);

//! Rows with an unobserved outcome get treatment kNeitherArm and outcome 0,
//! so that "A = a" afterwards means "A = a and the outcome was recorded".
ObservationTable recode_missingness(const ObservationTable& table,
                                    const std::vector<bool>& observed_flag);

enum class QuadratureRule { trapezoid, gauss_legendre };

//! Evaluation points and quadrature weights on [0, 1].
struct EvalGrid
{
  Eigen::VectorXd points;
  Eigen::VectorXd weights;
  QuadratureRule rule = QuadratureRule::trapezoid;

  Eigen::Index size() const { return points.size(); }
  double integrate(const Eigen::Ref<const Eigen::VectorXd>& values) const
  {
    return weights.dot(values);
  }
  //! Linear interpolation of grid-tabulated values; constant beyond the
  //! outermost nodes.
  double interpolate(const Eigen::Ref<const Eigen::VectorXd>& values,
                     double y) const;
  Eigen::MatrixXd interpolate_rows(const Eigen::Ref<const Eigen::MatrixXd>& values,
                                   const Eigen::Ref<const Eigen::VectorXd>& ys) const;
};

EvalGrid make_grid(Eigen::Index size,
                   QuadratureRule rule = QuadratureRule::trapezoid);

QuadratureRule parse_rule(const std::string& name);
std::string to_string(QuadratureRule rule);

struct FoldPlan
{
  std::size_t n = 0;
  std::size_t k_folds = 0;
  std::vector<std::size_t> assignment;
  std::uint64_t seed = 0;

  std::vector<std::size_t> rows_in(std::size_t fold) const;
  std::vector<std::size_t> rows_not_in(std::size_t fold) const;
};

FoldPlan make_folds(std::size_t n, std::size_t k, std::uint64_t seed);

} // namespace cfdens
