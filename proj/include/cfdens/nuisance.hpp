#pragma once

#include "cfdens/data.hpp"

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace cfdens {

inline constexpr double kDefaultClipEps = 0.01;

//! Conditional densities eta(.|x_i) of a set of rows, tabulated on a grid.
//! Either dense (rows x G) or a mixture W * A with W rows x m and A m x G,
//! which is what kernel regressions produce and is much cheaper to hold.
class CondDensityTable
{
public:
  CondDensityTable() = default;
  static CondDensityTable dense(Eigen::MatrixXd values);
  static CondDensityTable mixture(Eigen::MatrixXd weights, Eigen::MatrixXd atoms);

  Eigen::Index rows() const { return is_dense_ ? atoms_.rows() : weights_.rows(); }
  Eigen::Index grid_size() const { return atoms_.cols(); }
  Eigen::VectorXd row(Eigen::Index i) const;
  Eigen::MatrixXd to_dense() const;

  //! int h_k(y) eta(y|x_i) dy for every row i and column k of h (G x m).
  Eigen::MatrixXd expect(const EvalGrid& grid, const Eigen::Ref<const Eigen::MatrixXd>& h) const;
  //! Pointwise average over rows.
  Eigen::VectorXd average() const;

private:
  bool is_dense_ = true;
  Eigen::MatrixXd weights_;
  Eigen::MatrixXd atoms_;
};

//! A fitted propensity for one level, before clipping.
class PropensityFunction
{
public:
  virtual ~PropensityFunction() = default;
  virtual Eigen::VectorXd predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const = 0;
  bool separation_warning = false;
};

class PropensityLearner
{
public:
  virtual ~PropensityLearner() = default;
  virtual std::unique_ptr<PropensityFunction> fit(const ObservationTable& train,
                                                  int level) const = 0;
  virtual std::string name() const = 0;
};

class CondDensityFunction
{
public:
  virtual ~CondDensityFunction() = default;
  virtual CondDensityTable tabulate(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                    const EvalGrid& grid) const = 0;
};

class CondDensityLearner
{
public:
  virtual ~CondDensityLearner() = default;
  virtual std::unique_ptr<CondDensityFunction> fit(const ObservationTable& train,
                                                   int level,
                                                   const EvalGrid& grid) const = 0;
  virtual std::string name() const = 0;
};

//! Logistic regression of 1(A = a) on (1, X) by Newton-IRLS.
class LogisticPropensity : public PropensityLearner
{
public:
  std::unique_ptr<PropensityFunction> fit(const ObservationTable& train, int level) const override;
  std::string name() const override { return "logistic"; }
};

//! Share of level a among the k nearest training rows (standardized X).
class KnnPropensity : public PropensityLearner
{
public:
  explicit KnnPropensity(std::size_t k = 0)
    : k_(k)
  {}
  std::unique_ptr<PropensityFunction> fit(const ObservationTable& train, int level) const override;
  std::string name() const override { return "knn"; }

private:
  std::size_t k_; // 0 picks ceil(sqrt(n))
};

//! Ignores covariates and predicts a fixed value.
class ConstantPropensity : public PropensityLearner
{
public:
  explicit ConstantPropensity(double value)
    : value_(value)
  {}
  std::unique_ptr<PropensityFunction> fit(const ObservationTable& train, int level) const override;
  std::string name() const override { return "constant"; }

private:
  double value_;
};

struct Bandwidth
{
  bool silverman = true;
  double fixed = 0.0;

  static Bandwidth parse(const std::string& text); // "silverman" or a positive number
  std::string to_string() const;
};

//! 0.9 min(sd, IQR / 1.34) m^(-1/5).
double silverman_bandwidth(const Eigen::Ref<const Eigen::VectorXd>& y);

enum class Regressor { nadaraya_watson, knn };
Regressor parse_regressor(const std::string& text);
std::string to_string(Regressor r);

//! Regression of the Gaussian kernel K_h(Y - y) on X among rows with A = a,
//! giving eta(y|x) = sum_i w_i(x) K_h(Y_i - y), renormalized on the grid.
class KernelCondDensity : public CondDensityLearner
{
public:
  KernelCondDensity(Regressor regressor = Regressor::nadaraya_watson,
                    Bandwidth bandwidth = {},
                    std::size_t knn_k = 0)
    : regressor_(regressor)
    , bandwidth_(bandwidth)
    , knn_k_(knn_k)
  {}
  std::unique_ptr<CondDensityFunction> fit(const ObservationTable& train,
                                           int level,
                                           const EvalGrid& grid) const override;
  std::string name() const override;

private:
  Regressor regressor_;
  Bandwidth bandwidth_;
  std::size_t knn_k_;
};

//! Kernel density of Y among rows with A = a, ignoring X.
class MarginalCondDensity : public CondDensityLearner
{
public:
  explicit MarginalCondDensity(Bandwidth bandwidth = {})
    : bandwidth_(bandwidth)
  {}
  std::unique_ptr<CondDensityFunction> fit(const ObservationTable& train,
                                           int level,
                                           const EvalGrid& grid) const override;
  std::string name() const override { return "marginal"; }

private:
  Bandwidth bandwidth_;
};

struct NuisanceLearners
{
  std::shared_ptr<const PropensityLearner> propensity;
  std::shared_ptr<const CondDensityLearner> density;
  double clip_eps = kDefaultClipEps;
};

NuisanceLearners default_learners();

//! Clipping range [eps, 1 - eps (L - 1)] for L modeled levels.
Eigen::VectorXd clip_propensity(Eigen::VectorXd values, double eps, std::size_t levels);

//! Nuisances for one level evaluated on a fold's held-out rows.
struct ArmFit
{
  int level = 1;
  Eigen::VectorXd propensity; // clipped, one per eval row
  CondDensityTable cond;      // eta(.|X_i) for eval rows
  Eigen::VectorXd marginal;   // p_hat on the grid
  bool separation_warning = false;
};

struct FoldFit
{
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> eval_rows;
  ObservationTable eval;
  std::map<int, ArmFit> arms;

  const ArmFit& arm(int level) const;
};

//! Cross-fitted nuisances: fold f's arms are trained on the other folds.
struct NuisanceFit
{
  EvalGrid grid;
  FoldPlan plan;
  std::vector<FoldFit> folds;
  std::vector<int> levels;

  std::size_t n() const { return plan.n; }
  bool any_separation_warning() const;
};

NuisanceFit cross_fit(const ObservationTable& table,
                      const FoldPlan& plan,
                      const std::vector<int>& levels,
                      const NuisanceLearners& learners,
                      const EvalGrid& grid);

//! Fits on `train_rows`, evaluates on `eval_rows`; the two must be disjoint.
ArmFit fit_arm(const ObservationTable& table,
               std::span<const std::size_t> train_rows,
               std::span<const std::size_t> eval_rows,
               int level,
               const NuisanceLearners& learners,
               const EvalGrid& grid);

//! p_hat(y_j) = mean over eval rows of eta(y_j | X_i). Throws DataError on a
//! cross-fit violation.
Eigen::VectorXd plugin_marginal(const CondDensityFunction& fit,
                                const ObservationTable& table,
                                std::span<const std::size_t> train_rows,
                                std::span<const std::size_t> eval_rows,
                                const EvalGrid& grid);

} // namespace cfdens
