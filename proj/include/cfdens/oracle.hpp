#pragma once

#include "cfdens/data.hpp"
#include "cfdens/distances.hpp"
#include "cfdens/models.hpp"
#include "cfdens/nuisance.hpp"
#include "cfdens/solver.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace cfdens {

// ---------------------------------------------------------------- rng

std::uint64_t splitmix64(std::uint64_t x);
//! Seed of replicate `rep` at sample size `n`.
std::uint64_t rep_seed(std::uint64_t seed, std::uint64_t n, std::uint64_t rep);

// ---------------------------------------------------------------- DGPs

double truncated_normal_pdf(double y, double mu, double sigma);

//! Binary treatment, covariates uniform on [x_lo, x_hi]^dim, outcomes on [0, 1].
struct SyntheticDGP
{
  std::string name;
  std::string description;
  Eigen::Index dim = 2;
  double x_lo = 0.0;
  double x_hi = 1.0;
  std::function<double(const Eigen::VectorXd&)> pi1;
  std::function<double(int, double, const Eigen::VectorXd&)> eta;     // eta_a(y|x)
  std::function<double(int, const Eigen::VectorXd&)> eta_bound;       // >= sup_y eta_a(y|x)

  double propensity(int level, const Eigen::VectorXd& x) const
  {
    return level == 1 ? pi1(x) : 1.0 - pi1(x);
  }
  //! eta_a(.|x) on the grid, rescaled to integrate to one there.
  Eigen::VectorXd eta_on_grid(int level, const Eigen::VectorXd& x, const EvalGrid& grid) const;
};

//! D1 randomized, D2 confounded, D3 null, D4 mixture, D5 cosine (one active
//! coefficient, L2 effect 0.25), D6 exponential family.
std::vector<SyntheticDGP> dgp_library();
SyntheticDGP dgp_by_name(const std::string& name);

ObservationTable draw(const SyntheticDGP& dgp, std::size_t n, std::uint64_t seed);

//! Tensor Gauss-Legendre rule for the covariate law.
struct CovariateQuadrature
{
  Eigen::MatrixXd nodes; // q x dim
  Eigen::VectorXd weights; // sum to one
};
CovariateQuadrature covariate_quadrature(const SyntheticDGP& dgp, std::size_t per_dim = 40);

//! p_a = E_X eta_a(.|X) by covariate quadrature.
Eigen::VectorXd true_marginal(const SyntheticDGP& dgp, int level, const EvalGrid& grid,
                              std::size_t per_dim = 40);

//! Learners that return the DGP's own nuisance functions.
class TruePropensity : public PropensityLearner
{
public:
  explicit TruePropensity(SyntheticDGP dgp)
    : dgp_(std::move(dgp))
  {}
  std::unique_ptr<PropensityFunction> fit(const ObservationTable& train, int level) const override;
  std::string name() const override { return "true"; }

private:
  SyntheticDGP dgp_;
};

class TrueCondDensity : public CondDensityLearner
{
public:
  explicit TrueCondDensity(SyntheticDGP dgp)
    : dgp_(std::move(dgp))
  {}
  std::unique_ptr<CondDensityFunction> fit(const ObservationTable& train,
                                           int level,
                                           const EvalGrid& grid) const override;
  std::string name() const override { return "true"; }

private:
  SyntheticDGP dgp_;
};

NuisanceLearners oracle_learners(const SyntheticDGP& dgp, double clip_eps = kDefaultClipEps);

// ---------------------------------------------------------------- projection oracle

enum class OracleMethod { closed_form, nelder_mead };

struct NelderMeadOptions
{
  std::size_t starts = 5;
  double jitter = 0.25;
  std::size_t max_iter = 2000;
  double size_tol = 1e-9;
  std::uint64_t seed = 20240601;
};

struct OracleMinimum
{
  Eigen::VectorXd beta;
  double value = 0.0;
};

struct OracleResult
{
  Eigen::VectorXd beta_star;
  OracleMethod method = OracleMethod::closed_form;
  double divergence = 0.0;
  double moment_norm = 0.0;
  bool multimodal = false;
  std::vector<OracleMinimum> minima; // one per start
};

//! Minimizer of D_f(p_a, g(.; beta)) for a tabulated p_a. L2sq with the
//! series uses the closed form unless `force_nelder_mead` is set.
OracleResult oracle_projection(const Eigen::Ref<const Eigen::VectorXd>& p_a,
                               const ModelSpec& model,
                               const DistanceSpec& distance,
                               const EvalGrid& grid,
                               bool force_nelder_mead = false,
                               const NelderMeadOptions& opts = {});

// ---------------------------------------------------------------- Monte Carlo

struct McOutput
{
  Eigen::VectorXd estimate;
  Eigen::VectorXd se;
  Eigen::VectorXd lo; // interval used for coverage
  Eigen::VectorXd hi;
};

using McEstimator = std::function<McOutput(const ObservationTable&, std::uint64_t seed)>;

struct Experiment
{
  std::string name;
  SyntheticDGP dgp;
  std::vector<std::size_t> ns;
  std::size_t reps = 2;
  std::uint64_t seed = 1;
  Eigen::VectorXd truth;
  std::vector<std::string> labels;
  McEstimator estimator;
};

struct McRow
{
  std::size_t n = 0;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  Eigen::VectorXd estimate;
  Eigen::VectorXd se;
  std::vector<bool> covered;
  double runtime = 0.0; // seconds, excluded from determinism checks
};

struct McSummary
{
  std::size_t n = 0;
  std::size_t component = 0;
  std::size_t ok = 0;
  std::size_t failed = 0;
  double bias = 0.0;
  double rmse = 0.0;
  double median_abs_error = 0.0;
  double coverage = 0.0;
  double mean_se = 0.0;
};

struct McTable
{
  std::string name;
  std::vector<std::string> labels;
  Eigen::VectorXd truth;
  std::vector<McRow> rows;
  std::vector<McSummary> summary;

  const McSummary& at(std::size_t n, std::size_t component) const;
  std::string to_csv() const;
};

McTable mc_run(const Experiment& experiment);

//! Worker count from CFDENS_THREADS, defaulting to the hardware concurrency.
std::size_t worker_count();
//! Runs body(i) for i in [0, count) on up to worker_count() threads.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

struct ExperimentOptions
{
  std::size_t reps = 100;
  std::uint64_t seed = 1;
  std::vector<std::size_t> ns; // empty keeps the experiment's default
  std::size_t grid_size = 128;
  std::size_t folds = 2;
};

//! Named experiments for the command line.
std::vector<std::string> experiment_names();
Experiment make_experiment(const std::string& name, const ExperimentOptions& opts);

// ---------------------------------------------------------------- remainders

struct RemainderPoint
{
  double eps = 0.0;
  double r2 = 0.0;          // von Mises remainder of phi_a(h)
  double effect_bias = 0.0; // population bias of the one-step effect
};

//! Perturbs pi_a by eps u(x) and eta_a by eps eta_a (b_1 - E b_1), keeps the
//! covariate law fixed, and evaluates the remainders by quadrature. `h`
//! (on the grid) is the function in phi_a(h).
std::vector<RemainderPoint> remainder_curve(const SyntheticDGP& dgp,
                                            int level,
                                            const Eigen::Ref<const Eigen::VectorXd>& h,
                                            const DistanceSpec& effect_distance,
                                            const std::vector<double>& eps,
                                            const EvalGrid& grid);

//! Least-squares slope of log|value| on log eps.
double loglog_slope(const std::vector<double>& eps, const std::vector<double>& values);

} // namespace cfdens
