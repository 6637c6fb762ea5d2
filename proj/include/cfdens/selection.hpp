#pragma once

#include "cfdens/distances.hpp"
#include "cfdens/models.hpp"
#include "cfdens/nuisance.hpp"
#include "cfdens/projection.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace cfdens {

struct RiskResult
{
  double risk = 0.0;
  double se = 0.0;
  Eigen::VectorXd per_row; // pooled per-row summands
};

//! -2 P_n[1(A=a)/pi (g(Y) - int g eta) + int g eta] + int g^2, pooled over
//! the folds of `fit`. g is a density on the grid.
RiskResult pseudo_l2_risk(const NuisanceFit& fit, int level, const Eigen::Ref<const Eigen::VectorXd>& g);

struct Candidate
{
  std::string label;
  ModelSpec model;
  bool feasible = true;
  std::string warning;
};

struct RiskTable
{
  std::vector<Candidate> candidates;
  std::vector<double> risk; // NaN for infeasible candidates
  std::vector<double> se;
  std::size_t chosen = 0;
  std::vector<std::string> warnings;
};

//! Smallest risk wins; ties go to the smaller model, then to the earlier one.
std::size_t choose_candidate(const std::vector<Candidate>& candidates,
                             const std::vector<double>& risk);

struct SelectionOptions
{
  DistanceSpec distance;   // used to fit each candidate
  SolverOptions solver;
  std::uint64_t inner_seed = 0; // seeds the inner cross-fit on each training split
};

//! For each fold f: fit every model on the other folds (with an inner
//! cross-fit), clip it to a density, and score it on fold f with nuisances
//! trained off fold f. Risks are fold-size-weighted averages.
RiskTable select_model(const ObservationTable& table,
                       const FoldPlan& folds,
                       int level,
                       const std::vector<ModelSpec>& models,
                       const NuisanceLearners& learners,
                       const EvalGrid& grid,
                       const SelectionOptions& opts = {});

struct AggregateEstimate
{
  Eigen::VectorXd weights;   // one per candidate
  Eigen::VectorXd density;   // clipped aggregate on the grid
  Eigen::VectorXd raw;       // aggregate before clipping
  std::vector<std::size_t> dropped; // candidates removed as linearly dependent
  std::vector<std::string> roles;   // description of each fold role
};

//! Linear L2 aggregation of fixed candidate densities (columns of
//! `candidates`, on the grid): orthonormalize their span, estimate the
//! coordinates of p_a in it by the one-step closed form, map back.
AggregateEstimate aggregate_linear(const NuisanceFit& fit,
                                   int level,
                                   const Eigen::Ref<const Eigen::MatrixXd>& candidates);

struct AggregationOptions
{
  SolverOptions solver;
  bool swap = true;       // average the two split roles
  std::size_t folds = 2;  // cross-fitting folds inside each split
  std::uint64_t seed = 0;
};

//! Split the sample in two, fit the models (L2sq) on one half, aggregate on
//! the other, optionally swap roles and average, then clip.
AggregateEstimate aggregate_pipeline(const ObservationTable& table,
                                     int level,
                                     const std::vector<ModelSpec>& models,
                                     const NuisanceLearners& learners,
                                     const EvalGrid& grid,
                                     const AggregationOptions& opts = {});

} // namespace cfdens
